fn main() {
    std::process::exit(ptr_core::cli::run(std::env::args_os()));
}
