fn main() {
    std::process::exit(deepdict::cli::run(std::env::args_os()));
}
