fn main() {
    std::process::exit(coclick::cli::run(std::env::args_os()));
}
