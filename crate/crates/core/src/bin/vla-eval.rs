fn main() {
    std::process::exit(vla_eval::cli::main_with(std::env::args_os()));
}
