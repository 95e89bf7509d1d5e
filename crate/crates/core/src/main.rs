fn main() {
    std::process::exit(advrep::cli::run(std::env::args_os()));
}
