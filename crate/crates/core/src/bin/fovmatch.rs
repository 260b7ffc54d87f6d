fn main() {
    std::process::exit(fovmatch::cli::run(std::env::args_os()));
}
