fn main() {
    std::process::exit(nonlocal_korn::cli::main_with_args(std::env::args_os()));
}
