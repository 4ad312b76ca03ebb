fn main() {
    std::process::exit(hvan::cli::cli_main(std::env::args_os()));
}
