fn main() {
    std::process::exit(klvi::cli::run(std::env::args_os()));
}
