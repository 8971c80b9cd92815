fn main() {
    std::process::exit(smog_core::cli::run(std::env::args_os()));
}
