//! Plain-text MDP format:
//!
//! ```text
//! mdp <num_states> <num_actions> <gamma>
//! <|A| blocks of |S| rows with |S| transition probabilities>
//! <|S| rows with |A| rewards>
//! ```
//!
//! Numbers are written with 17 significant digits so files round-trip
//! exactly. Blank lines and `#` comments are ignored.

use super::Mdp;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::fmt::Write;

pub fn write_mdp(mdp: &Mdp) -> String {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut out = String::new();
    let _ = writeln!(out, "mdp {ns} {na} {:.16e}", mdp.gamma);
    for (a, p) in mdp.transitions.iter().enumerate() {
        let _ = writeln!(out, "# P[{a}]");
        for s in 0..ns {
            let row: Vec<String> = (0..ns).map(|t| format!("{:.16e}", p[(s, t)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    let _ = writeln!(out, "# R");
    for s in 0..ns {
        let row: Vec<String> = (0..na).map(|a| format!("{:.16e}", mdp.r(s, a))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

struct Tokens<'a> {
    items: Vec<(usize, usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            let mut col = 0;
            for piece in line.split_inclusive(char::is_whitespace) {
                let tok = piece.trim();
                if !tok.is_empty() {
                    items.push((ln + 1, col + 1, tok));
                }
                col += piece.len();
            }
        }
        Tokens { items, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, usize, &'a str)> {
        let t = self.items.get(self.pos).copied().ok_or_else(|| {
            let (line, column) = self.items.last().map(|t| (t.0, t.1)).unwrap_or((1, 1));
            Error::Parse { line, column, message: format!("unexpected end of input, expected {what}") }
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (line, column, tok) = self.next(what)?;
        tok.parse::<T>().map_err(|_| Error::Parse { line, column, message: format!("expected {what}, found '{tok}'") })
    }
}

pub fn parse_mdp(text: &str) -> Result<Mdp> {
    let mut tk = Tokens::new(text);
    let (line, column, head) = tk.next("header 'mdp'")?;
    if head != "mdp" {
        return Err(Error::Parse { line, column, message: format!("expected header 'mdp', found '{head}'") });
    }
    let ns: usize = tk.number("number of states")?;
    let na: usize = tk.number("number of actions")?;
    let gamma: f64 = tk.number("discount factor")?;
    let mut transitions = Vec::with_capacity(na);
    for _ in 0..na {
        let mut p = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for t in 0..ns {
                p[(s, t)] = tk.number("transition probability")?;
            }
        }
        transitions.push(p);
    }
    let mut rewards = DMatrix::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            rewards[(s, a)] = tk.number("reward")?;
        }
    }
    if let Some((line, column, tok)) = tk.items.get(tk.pos) {
        return Err(Error::Parse { line: *line, column: *column, message: format!("trailing token '{tok}'") });
    }
    Mdp::new(transitions, rewards, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn round_trip_is_exact() {
        let mdp = random_mdp(9, 6, 3, 4, 0.87).unwrap();
        let back = parse_mdp(&write_mdp(&mdp)).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn reports_position() {
        let err = parse_mdp("mdp 1 1 0.5\n1.0\n  x\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 3)),
            e => panic!("{e}"),
        }
    }
}
