fn main() {
    std::process::exit(hikedim::cli::run(std::env::args_os()));
}
