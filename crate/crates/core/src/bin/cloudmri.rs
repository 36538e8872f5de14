fn main() {
    std::process::exit(cloudmri::gateway::cli::main_with_args(std::env::args_os()));
}
