fn main() {
    std::process::exit(mcrb_core::cli::run(std::env::args_os()));
}
