//! Minimal external agent: answers the handshake and proposes zero input
//! on every tick.

use std::io::{self, BufRead, Write};

use shipsafe::external::{FromAgent, ToAgent};

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let reply = match serde_json::from_str::<ToAgent>(&line) {
            Ok(ToAgent::Hello { .. }) => FromAgent::Ready,
            Ok(ToAgent::Obs { tick, .. }) => FromAgent::Act { tick, u: [0.0, 0.0] },
            Ok(ToAgent::Done { .. }) => break,
            Err(e) => {
                eprintln!("zero-agent: bad message: {e}");
                std::process::exit(1);
            }
        };
        serde_json::to_writer(&mut out, &reply)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
