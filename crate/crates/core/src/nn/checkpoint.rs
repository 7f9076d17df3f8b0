//! Versioned text checkpoint. Floats are stored as their IEEE-754 bit
//! patterns in hex, so a save/load cycle is bit-exact and the file is
//! diff-stable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{LstmQNetwork, MlpQNetwork, NetError, Optimizer, OptimizerKind, Params, QNet};

pub const CHECKPOINT_MAGIC: &str = "drqn-arbr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: QNet<f64>,
    pub optimizer: Optimizer<f64>,
    pub train_step: u64,
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64, NetError> {
    u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| bad(format!("bad float `{s}`")))
}

fn write_params<W: Write>(out: &mut W, role: &str, params: &Params<f64>) -> std::io::Result<()> {
    for t in &params.tensors {
        writeln!(out, "tensor {role} {} {} {}", t.name, t.rows, t.cols)?;
        let line: Vec<String> = t.data.iter().map(|v| hex(*v)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String, NetError> {
        self.line_no += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(bad(e.to_string())),
            None => Err(bad(format!("unexpected end of file at line {}", self.line_no))),
        }
    }

    fn field(&mut self, key: &str) -> Result<String, NetError> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(bad(format!("line {}: expected `{key}`", self.line_no))),
        }
    }

    fn number<N: std::str::FromStr>(&mut self, key: &str) -> Result<N, NetError> {
        let raw = self.field(key)?;
        raw.parse().map_err(|_| bad(format!("line {}: bad {key}", self.line_no)))
    }

    fn read_params(&mut self, role: &str, into: &mut Params<f64>) -> Result<(), NetError> {
        for t in &mut into.tensors {
            let header = self.next_line()?;
            let expected = format!("tensor {role} {} {} {}", t.name, t.rows, t.cols);
            if header != expected {
                return Err(bad(format!("line {}: expected `{expected}`", self.line_no)));
            }
            let values = self.next_line()?;
            let parsed: Vec<f64> = values.split_whitespace().map(unhex).collect::<Result<_, _>>()?;
            if parsed.len() != t.data.len() {
                return Err(NetError::DimensionMismatch { expected: t.data.len(), found: parsed.len() });
            }
            t.data = parsed;
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), NetError> {
        let io = |e: std::io::Error| bad(e.to_string());
        let opt = &self.optimizer;
        let kind = match opt.kind {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        (|| -> std::io::Result<()> {
            writeln!(out, "{CHECKPOINT_MAGIC}")?;
            writeln!(out, "version {CHECKPOINT_VERSION}")?;
            writeln!(out, "model {}", self.net.kind())?;
            writeln!(out, "input_dim {}", self.net.input_dim())?;
            writeln!(out, "hidden {}", self.net.hidden())?;
            writeln!(out, "train_step {}", self.train_step)?;
            writeln!(out, "optimizer {kind}")?;
            writeln!(out, "learning_rate {}", hex(opt.learning_rate))?;
            writeln!(out, "beta1 {}", hex(opt.beta1))?;
            writeln!(out, "beta2 {}", hex(opt.beta2))?;
            writeln!(out, "epsilon {}", hex(opt.epsilon))?;
            writeln!(out, "optimizer_step {}", opt.step)?;
            write_params(&mut out, "param", self.net.params())?;
            write_params(&mut out, "m", &opt.m)?;
            write_params(&mut out, "v", &opt.v)?;
            writeln!(out, "end")?;
            out.flush()
        })()
        .map_err(io)
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, NetError> {
        let mut lines = Lines { inner: source.lines(), line_no: 0 };
        if lines.next_line()? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version: u32 = lines.number("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let model = lines.field("model")?;
        let input_dim: usize = lines.number("input_dim")?;
        let hidden: usize = lines.number("hidden")?;
        let train_step: u64 = lines.number("train_step")?;
        let kind = match lines.field("optimizer")?.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(bad(format!("unknown optimizer `{other}`"))),
        };
        let learning_rate = unhex(&lines.field("learning_rate")?)?;
        let beta1 = unhex(&lines.field("beta1")?)?;
        let beta2 = unhex(&lines.field("beta2")?)?;
        let epsilon = unhex(&lines.field("epsilon")?)?;
        let opt_step: u64 = lines.number("optimizer_step")?;

        let mut net = match model.as_str() {
            "lstm" => QNet::Recurrent(LstmQNetwork::zeros(input_dim, hidden)),
            "mlp" => QNet::Feedforward(MlpQNetwork::zeros(input_dim, hidden)),
            other => return Err(bad(format!("unknown model `{other}`"))),
        };
        lines.read_params("param", net.params_mut())?;
        let mut optimizer = Optimizer::new(kind, learning_rate, net.params());
        optimizer.beta1 = beta1;
        optimizer.beta2 = beta2;
        optimizer.epsilon = epsilon;
        optimizer.step = opt_step;
        lines.read_params("m", &mut optimizer.m)?;
        lines.read_params("v", &mut optimizer.v)?;
        if lines.next_line()? != "end" {
            return Err(bad("missing end marker"));
        }
        Ok(Self { net, optimizer, train_step })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let file = File::create(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        self.write(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let file = File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::read(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_checkpoint(net: QNet<f64>) -> Checkpoint {
        let mut net = net;
        let mut optimizer = Optimizer::adam(0.00025, net.params());
        let h0 = net.zero_hidden();
        let seq = vec![vec![0.3, -0.1, 0.7]; 4];
        for _ in 0..3 {
            let pass = net.forward(&seq, &h0, true).unwrap();
            let grads = net.backward(&pass, &[[1.0, -0.5, 0.25]; 4]).unwrap();
            optimizer.apply(net.params_mut(), &grads).unwrap();
        }
        Checkpoint { net, optimizer, train_step: 3 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for net in [QNet::Recurrent(LstmQNetwork::init(3, 4, 7)), QNet::Feedforward(MlpQNetwork::init(3, 4, 7))] {
            let ckpt = trained_checkpoint(net);
            let mut buf = Vec::new();
            ckpt.write(&mut buf).unwrap();
            let back = Checkpoint::read(buf.as_slice()).unwrap();
            assert_eq!(back, ckpt);
            let mut again = Vec::new();
            back.write(&mut again).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn rejects_foreign_or_truncated_files() {
        assert!(Checkpoint::read("hello\n".as_bytes()).is_err());
        let ckpt = trained_checkpoint(QNet::Recurrent(LstmQNetwork::init(3, 2, 1)));
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(15).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::read(truncated.as_bytes()).is_err());
        let wrong_version = text.replacen("version 1", "version 9", 1);
        assert!(Checkpoint::read(wrong_version.as_bytes()).is_err());
    }
}
