fn main() -> std::process::ExitCode {
    beliefkit::cli::main_with_args(std::env::args_os())
}
