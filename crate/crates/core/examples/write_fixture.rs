//! Regenerates the shipped oracle fixture.
//!
//! cargo run -p tqpo --example write_fixture -- crates/core/fixtures/chain_oracle.json

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/chain_oracle.json".into());
    let f = tqpo::fixture::generate("chain", 6, 10, 7).expect("fixture generation");
    std::fs::write(&path, tqpo::fixture::to_string(&f)).expect("write fixture");
    println!("wrote {} cases to {path}", f.cases.len());
}
