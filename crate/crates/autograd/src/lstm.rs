use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};

/// Standard LSTM cell.
///
/// `weight` is `[4d, d_in + d]` acting on `x ⊕ h_prev`, `bias` is `[4d]`.
/// Gate rows are ordered input, forget, candidate, output:
///
/// ```text
/// i, f, o = σ(·)    g = tanh(·)
/// c = f ⊙ c_prev + i ⊙ g
/// h = o ⊙ tanh(c)
/// ```
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weight: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let d = match tape.shape(h_prev) {
        [d] => *d,
        s => return shape_err("lstm_cell", format!("hidden state must be 1-D, got {s:?}")),
    };
    if tape.shape(c_prev) != [d] {
        return shape_err(
            "lstm_cell",
            format!("cell state {:?} vs hidden {d}", tape.shape(c_prev)),
        );
    }
    let d_in = match tape.shape(x) {
        [n] => *n,
        s => return shape_err("lstm_cell", format!("input must be 1-D, got {s:?}")),
    };
    if tape.shape(weight) != [4 * d, d_in + d] {
        return shape_err(
            "lstm_cell",
            format!(
                "weight {:?}, expected [{}, {}]",
                tape.shape(weight),
                4 * d,
                d_in + d
            ),
        );
    }
    let xh = tape.concat(&[x, h_prev], 0)?;
    let z = tape.linear(xh, weight, Some(bias))?;
    let zi = tape.slice(z, 0, d)?;
    let zf = tape.slice(z, d, d)?;
    let zg = tape.slice(z, 2 * d, d)?;
    let zo = tape.slice(z, 3 * d, d)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let keep = tape.hadamard(f, c_prev)?;
    let write = tape.hadamard(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.hadamard(o, tc)?;
    Ok((h, c))
}
