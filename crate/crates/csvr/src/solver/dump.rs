//! Line-oriented text dump of a [`ConicProgram`], for debugging and for
//! feeding external tools. Grammar (one record per line, whitespace
//! separated):
//!
//! ```text
//! conic-program v1
//! nvar <n>
//! nrow <m>
//! P <nnz>          followed by nnz lines: <row> <col> <value>
//! q <n>            followed by n lines:   <index> <value>
//! A <nnz>          followed by nnz lines: <row> <col> <value>
//! bounds <m>       followed by m lines:   <row> <l> <u>   (inf / -inf allowed)
//! balls <k>        followed by k lines:   <radius> <index>...
//! blocks <k>       followed by k lines:   <label> <index>...
//! end
//! ```
//!
//! Floats are printed in exponent form with enough digits to round-trip.

use super::ConicProgram;
use std::io::Write;

fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:e}")
    }
}

pub(super) fn write_dump<W: Write>(prog: &ConicProgram, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "conic-program v1")?;
    writeln!(w, "nvar {}", prog.nvar())?;
    writeln!(w, "nrow {}", prog.nrows())?;

    writeln!(w, "P {}", prog.p().nnz())?;
    for (i, j, v) in prog.p().iter_triplets() {
        writeln!(w, "{i} {j} {}", fmt(v))?;
    }
    writeln!(w, "q {}", prog.q().len())?;
    for (j, v) in prog.q().iter().enumerate() {
        writeln!(w, "{j} {}", fmt(*v))?;
    }
    writeln!(w, "A {}", prog.a().nnz())?;
    for (i, j, v) in prog.a().iter_triplets() {
        writeln!(w, "{i} {j} {}", fmt(v))?;
    }
    writeln!(w, "bounds {}", prog.nrows())?;
    for i in 0..prog.nrows() {
        writeln!(w, "{i} {} {}", fmt(prog.l()[i]), fmt(prog.u()[i]))?;
    }
    writeln!(w, "balls {}", prog.balls().len())?;
    for b in prog.balls() {
        write!(w, "{}", fmt(b.radius()))?;
        for i in b.indices() {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "blocks {}", prog.blocks().len())?;
    for b in prog.blocks() {
        write!(w, "{}", b.label)?;
        for i in &b.indices {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "end")
}
