fn main() {
    std::process::exit(leankan_cli::run_cli(std::env::args_os()));
}
