use crate::autodiff::Var;
use crate::error::{Result, StoneError};
use crate::params::{Bound, ParamBuilder, ParamId};

fn check_step(op: &'static str, x: &Var<'_>, h: &Var<'_>, in_dim: usize, hidden: usize) -> Result<()> {
    let (xd, hd) = (x.dims(), h.dims());
    if xd.len() != 2 || hd.len() != 2 || xd[1] != in_dim || hd[1] != hidden || xd[0] != hd[0] {
        return Err(StoneError::dims(op, &xd, &hd));
    }
    Ok(())
}

/// Gate pre-activation `[a;b]·Wᵀ + bias`.
fn gate<'t>(p: &Bound<'t>, joined: Var<'t>, w: ParamId, b: ParamId) -> Result<Var<'t>> {
    joined.matmul_bt(p.var(w))?.add(p.var(b))
}

/// Gated recurrent unit with the update convention `h' = (1−z)⊙h̃ + z⊙h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let cat = in_dim + hidden;
        Ok(GruCell {
            w_z: pb.glorot(&format!("{name}.w_z"), hidden, cat)?,
            w_r: pb.glorot(&format!("{name}.w_r"), hidden, cat)?,
            w_h: pb.glorot(&format!("{name}.w_h"), hidden, cat)?,
            b_z: pb.zeros(&format!("{name}.b_z"), &[hidden])?,
            b_r: pb.zeros(&format!("{name}.b_r"), &[hidden])?,
            b_h: pb.zeros(&format!("{name}.b_h"), &[hidden])?,
            in_dim,
            hidden,
        })
    }

    /// One step: `x: [batch×in]`, `h: [batch×q]` -> `[batch×q]`.
    pub fn step<'t>(&self, p: &Bound<'t>, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        check_step("gru_step", &x, &h, self.in_dim, self.hidden)?;
        let tape = x.tape();
        let xh = tape.concat(&[x, h], 1)?;
        let z = gate(p, xh, self.w_z, self.b_z)?.sigmoid()?;
        let r = gate(p, xh, self.w_r, self.b_r)?.sigmoid()?;
        let xrh = tape.concat(&[x, r.mul(h)?], 1)?;
        let candidate = gate(p, xrh, self.w_h, self.b_h)?.tanh()?;
        // (1−z)⊙h̃ + z⊙h
        let keep = z.scale(-1.0)?.add_scalar(1.0)?;
        keep.mul(candidate)?.add(z.mul(h)?)
    }
}

/// Long short-term memory cell; forget-gate bias starts at 1.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let cat = in_dim + hidden;
        Ok(LstmCell {
            w_i: pb.glorot(&format!("{name}.w_i"), hidden, cat)?,
            w_f: pb.glorot(&format!("{name}.w_f"), hidden, cat)?,
            w_o: pb.glorot(&format!("{name}.w_o"), hidden, cat)?,
            w_c: pb.glorot(&format!("{name}.w_c"), hidden, cat)?,
            b_i: pb.zeros(&format!("{name}.b_i"), &[hidden])?,
            b_f: pb.filled(&format!("{name}.b_f"), &[hidden], 1.0)?,
            b_o: pb.zeros(&format!("{name}.b_o"), &[hidden])?,
            b_c: pb.zeros(&format!("{name}.b_c"), &[hidden])?,
            in_dim,
            hidden,
        })
    }

    /// One step returning `(h', c')`.
    pub fn step<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        h: Var<'t>,
        c: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        check_step("lstm_step", &x, &h, self.in_dim, self.hidden)?;
        if c.dims() != h.dims() {
            return Err(StoneError::dims("lstm_step", &h.dims(), &c.dims()));
        }
        let xh = x.tape().concat(&[x, h], 1)?;
        let i = gate(p, xh, self.w_i, self.b_i)?.sigmoid()?;
        let f = gate(p, xh, self.w_f, self.b_f)?.sigmoid()?;
        let o = gate(p, xh, self.w_o, self.b_o)?.sigmoid()?;
        let g = gate(p, xh, self.w_c, self.b_c)?.tanh()?;
        let c_next = f.mul(c)?.add(i.mul(g)?)?;
        let h_next = o.mul(c_next.tanh()?)?;
        Ok((h_next, c_next))
    }
}
