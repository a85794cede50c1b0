fn main() {
    std::process::exit(zipgrid_cli::run_cli(std::env::args_os()));
}
