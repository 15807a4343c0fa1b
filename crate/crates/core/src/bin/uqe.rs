fn main() {
    std::process::exit(uqe_core::cli::run(std::env::args_os()));
}
