fn main() -> std::process::ExitCode {
    factpipe::cli::main_entry()
}
