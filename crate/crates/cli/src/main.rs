fn main() -> std::process::ExitCode {
    modalmap_cli::main_with_args()
}
