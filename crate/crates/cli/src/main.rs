fn main() {
    std::process::exit(dynmri_cli::app::run(std::env::args_os()));
}
