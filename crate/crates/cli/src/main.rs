fn main() {
    std::process::exit(qmri_cli::run(std::env::args_os()));
}
