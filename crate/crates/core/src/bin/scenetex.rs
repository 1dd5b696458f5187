fn main() -> std::process::ExitCode {
    scenetex::cli::main()
}
