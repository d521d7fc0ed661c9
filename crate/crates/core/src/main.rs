fn main() -> std::process::ExitCode {
    phasesync::cli::main_with(std::env::args_os())
}
