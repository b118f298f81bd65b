fn main() {
    std::process::exit(sympeig::cli::run(std::env::args_os()));
}
