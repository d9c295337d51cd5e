fn main() {
    std::process::exit(marginals::cli::parse_and_dispatch(std::env::args_os()));
}
