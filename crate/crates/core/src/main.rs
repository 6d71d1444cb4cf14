fn main() {
    std::process::exit(eigenblock::cli::run(std::env::args_os()));
}
