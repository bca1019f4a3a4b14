fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let env = framerepeat::config::process_env();
    std::process::exit(framerepeat::cli::main_with(std::env::args_os(), &env));
}
