fn main() {
    std::process::exit(faceaudit::cli::run(std::env::args_os()));
}
