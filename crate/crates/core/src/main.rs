fn main() {
    std::process::exit(veritab::cli::run(std::env::args_os()));
}
