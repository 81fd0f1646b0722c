fn main() -> std::process::ExitCode {
    topoedit_service::cli::main()
}
