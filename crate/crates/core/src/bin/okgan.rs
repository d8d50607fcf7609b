fn main() {
    std::process::exit(okgan::cli::run(std::env::args_os()));
}
