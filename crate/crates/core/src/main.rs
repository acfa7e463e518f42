fn main() {
    std::process::exit(dxann::cli::run(std::env::args_os()));
}
