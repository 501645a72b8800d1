fn main() {
    std::process::exit(geodex::cli::run(std::env::args_os()));
}
