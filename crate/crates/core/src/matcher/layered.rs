//! Layered generative models: ordered groups of latent nodes whose
//! distribution parameters are expressions over named hyperparameters and
//! the nodes of the preceding layer, ending in a scalar output node.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::analytic::{ConditionalLaw, EdFamily};
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, Parameterization, UnconstrainedVector};

use super::dual::{Dual, MAX_PARAMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Parameters (shape, rate).
    Gamma,
    /// Parameters (mean, std).
    Normal,
    /// Parameter (rate).
    Poisson,
}

impl Family {
    pub fn arity(self) -> usize {
        match self {
            Family::Gamma | Family::Normal => 2,
            Family::Poisson => 1,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Family::Poisson)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Hyper(String),
    Const(f64),
    Node(String),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Square(Box<Expr>),
    Sqrt(Box<Expr>),
    /// Inner product of two vector nodes of equal width.
    Dot(String, String),
    /// Sum over the entries of a vector node.
    Sum(String),
}

impl Expr {
    pub fn hyper(name: &str) -> Expr {
        Expr::Hyper(name.into())
    }

    pub fn node(name: &str) -> Expr {
        Expr::Node(name.into())
    }

    pub fn add(self, o: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(o))
    }

    pub fn mul(self, o: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(o))
    }

    pub fn div(self, o: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(o))
    }

    pub fn square(self) -> Expr {
        Expr::Square(Box::new(self))
    }

    pub fn sqrt(self) -> Expr {
        Expr::Sqrt(Box::new(self))
    }

    fn visit<'a>(&'a self, hypers: &mut Vec<&'a str>, nodes: &mut Vec<&'a str>) {
        match self {
            Expr::Hyper(h) => hypers.push(h),
            Expr::Const(_) => {}
            Expr::Node(n) | Expr::Sum(n) => nodes.push(n),
            Expr::Dot(a, b) => {
                nodes.push(a);
                nodes.push(b);
            }
            Expr::Add(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(hypers, nodes);
                b.visit(hypers, nodes);
            }
            Expr::Square(a) | Expr::Sqrt(a) => a.visit(hypers, nodes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub family: Family,
    pub params: Vec<Expr>,
    pub width: usize,
}

impl Node {
    pub fn new(name: &str, family: Family, params: Vec<Expr>, width: usize) -> Self {
        Node { name: name.into(), family, params, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Closed-form conditional moments given the parents.
    #[default]
    Exact,
    /// Self-normalized sums over sampled outputs (Poisson) or plain MC
    /// averages over reparameterized draws (continuous families).
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputNode {
    pub name: String,
    pub family: Family,
    pub params: Vec<Expr>,
    #[serde(default)]
    pub mode: OutputMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub layers: Vec<Vec<Node>>,
    pub output: OutputNode,
}

fn gamma_params(p: Parameterization, mean_or_shape: &str, std_or_rate: &str) -> Vec<Expr> {
    match p {
        Parameterization::MeanStd => {
            let (m, s) = (Expr::hyper(mean_or_shape), Expr::hyper(std_or_rate));
            vec![m.clone().div(s.clone()).square(), m.div(s.square())]
        }
        Parameterization::ShapeRate => vec![Expr::hyper(mean_or_shape), Expr::hyper(std_or_rate)],
    }
}

fn pmf_latents(k: u32, p: Parameterization) -> Vec<Node> {
    let (row, col) = match p {
        Parameterization::MeanStd => (("mu_theta", "sigma_theta"), ("mu_beta", "sigma_beta")),
        Parameterization::ShapeRate => (("a", "b"), ("c", "d")),
    };
    vec![
        Node::new("theta", Family::Gamma, gamma_params(p, row.0, row.1), k as usize),
        Node::new("beta", Family::Gamma, gamma_params(p, col.0, col.1), k as usize),
    ]
}

fn poisson_output(rate: Expr) -> OutputNode {
    OutputNode { name: "y".into(), family: Family::Poisson, params: vec![rate], mode: OutputMode::Exact }
}

impl LayeredModel {
    pub fn new(layers: Vec<Vec<Node>>, output: OutputNode) -> Result<Self> {
        let m = LayeredModel { layers, output };
        m.validate()?;
        Ok(m)
    }

    /// θ, β ~ Gamma, Y ~ Poisson(θ·β).
    pub fn pmf(k: u32, parameterization: Parameterization) -> Self {
        LayeredModel {
            layers: vec![pmf_latents(k, parameterization)],
            output: poisson_output(Expr::Dot("theta".into(), "beta".into())),
        }
    }

    /// PMF latents, N ~ Poisson(θ·β), then Y | N with mean κNψ′ and
    /// variance κNψ″.
    pub fn cpmf(k: u32, parameterization: Parameterization, ed: &EdFamily) -> Result<Self> {
        ed.validate()?;
        let (f, g) = (ed.mean_factor(), ed.variance_factor());
        let n = Expr::node("n");
        let output = match ed.law {
            ConditionalLaw::Normal | ConditionalLaw::Degenerate => OutputNode {
                name: "y".into(),
                family: Family::Normal,
                params: vec![Expr::Const(f).mul(n.clone()), Expr::Const(g).mul(n).sqrt()],
                mode: OutputMode::Exact,
            },
            ConditionalLaw::Gamma => OutputNode {
                name: "y".into(),
                family: Family::Gamma,
                params: vec![Expr::Const(f * f / g).mul(n), Expr::Const(f / g)],
                mode: OutputMode::Exact,
            },
        };
        LayeredModel::new(
            vec![
                pmf_latents(k, parameterization),
                vec![Node::new("n", Family::Poisson, vec![Expr::Dot("theta".into(), "beta".into())], 1)],
            ],
            output,
        )
    }

    /// ξ ~ Gamma(a′, a′/b′), η ~ Gamma(c′, c′/d′); θ ~ Gamma(a, ξ),
    /// β ~ Gamma(c, η); Y ~ Poisson(θ·β).
    pub fn hpf(k: u32) -> Self {
        let hyper_rate = |shape: &str, mean: &str| vec![Expr::hyper(shape), Expr::hyper(shape).div(Expr::hyper(mean))];
        LayeredModel {
            layers: vec![
                vec![
                    Node::new("xi", Family::Gamma, hyper_rate("a_prime", "b_prime"), 1),
                    Node::new("eta", Family::Gamma, hyper_rate("c_prime", "d_prime"), 1),
                ],
                vec![
                    Node::new("theta", Family::Gamma, vec![Expr::hyper("a"), Expr::node("xi")], k as usize),
                    Node::new("beta", Family::Gamma, vec![Expr::hyper("c"), Expr::node("eta")], k as usize),
                ],
            ],
            output: poisson_output(Expr::Dot("theta".into(), "beta".into())),
        }
    }

    /// The standard layered form of a PMF, CPMF or HPF hyperparameter set.
    pub fn for_hyper(h: &Hyperparameters, parameterization: Parameterization) -> Result<Self> {
        match h {
            Hyperparameters::Pmf(p) => Ok(LayeredModel::pmf(p.k, parameterization)),
            Hyperparameters::Cpmf(c) => LayeredModel::cpmf(c.base.k, parameterization, &c.ed),
            Hyperparameters::Hpf(p) => Ok(LayeredModel::hpf(p.k)),
        }
    }

    pub fn with_output_mode(mut self, mode: OutputMode) -> Self {
        self.output.mode = mode;
        self
    }

    pub fn continuous_layers(&self) -> usize {
        self.layers.iter().filter(|l| !is_discrete_layer(l)).count()
    }

    pub fn hyper_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let all = self.layers.iter().flatten().flat_map(|n| &n.params).chain(&self.output.params);
        for e in all {
            let (mut h, mut n) = (Vec::new(), Vec::new());
            e.visit(&mut h, &mut n);
            for name in h {
                if !out.iter().any(|o| o == name) {
                    out.push(name.to_string());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, (usize, usize)> = HashMap::new();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::Model(format!("layer {l} is empty")));
            }
            if layer.iter().any(|n| n.family.is_discrete()) && (layer.len() != 1 || layer[0].width != 1) {
                return Err(Error::Model(format!("discrete layer {l} must hold a single scalar node")));
            }
            for node in layer {
                if node.width == 0 {
                    return Err(Error::Model(format!("node {} has width 0", node.name)));
                }
                if seen.insert(&node.name, (l, node.width)).is_some() || node.name == self.output.name {
                    return Err(Error::Model(format!("duplicate node name {}", node.name)));
                }
            }
        }
        let check = |owner: &str, family: Family, params: &[Expr], layer: usize, width: usize| -> Result<()> {
            if params.len() != family.arity() {
                return Err(Error::Model(format!(
                    "node {owner}: {family:?} takes {} parameters, got {}",
                    family.arity(),
                    params.len()
                )));
            }
            for e in params {
                let (mut h, mut nodes) = (Vec::new(), Vec::new());
                e.visit(&mut h, &mut nodes);
                for n in nodes {
                    match seen.get(n) {
                        Some(&(pl, pw)) if layer > 0 && pl == layer - 1 => {
                            if pw != 1 && pw != width && !matches!(e, Expr::Dot(..) | Expr::Sum(..)) {
                                check_width_usage(e, n, pw, width, owner)?;
                            }
                        }
                        Some(&(pl, _)) => {
                            return Err(Error::Model(format!(
                                "node {owner} in layer {layer} refers to {n} in layer {pl}; parents must lie in the previous layer"
                            )))
                        }
                        None => return Err(Error::Model(format!("node {owner} refers to unknown node {n}"))),
                    }
                }
                check_dots(e, &seen)?;
            }
            Ok(())
        };
        for (l, layer) in self.layers.iter().enumerate() {
            for node in layer {
                check(&node.name, node.family, &node.params, l, node.width)?;
            }
        }
        check(&self.output.name, self.output.family, &self.output.params, self.layers.len(), 1)
    }
}

fn is_discrete_layer(layer: &[Node]) -> bool {
    layer.iter().any(|n| n.family.is_discrete())
}

/// A bare vector reference must match the width of the node using it.
fn check_width_usage(e: &Expr, name: &str, pw: usize, width: usize, owner: &str) -> Result<()> {
    let bare = match e {
        Expr::Node(n) => n == name,
        Expr::Add(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            return check_width_usage(a, name, pw, width, owner).and(check_width_usage(b, name, pw, width, owner))
        }
        Expr::Square(a) | Expr::Sqrt(a) => return check_width_usage(a, name, pw, width, owner),
        _ => false,
    };
    if bare && pw != width {
        return Err(Error::Model(format!("node {owner} (width {width}) uses vector {name} of width {pw} elementwise")));
    }
    Ok(())
}

fn check_dots(e: &Expr, seen: &HashMap<&str, (usize, usize)>) -> Result<()> {
    match e {
        Expr::Dot(a, b) => {
            let (wa, wb) = (seen.get(a.as_str()).map(|x| x.1), seen.get(b.as_str()).map(|x| x.1));
            if wa != wb {
                return Err(Error::Model(format!("dot product of {a} and {b} with unequal widths")));
            }
            Ok(())
        }
        Expr::Add(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => check_dots(a, seen).and(check_dots(b, seen)),
        Expr::Square(a) | Expr::Sqrt(a) => check_dots(a, seen),
        _ => Ok(()),
    }
}

/// Expression with names resolved to hyperparameter slots and node ids.
#[derive(Debug, Clone)]
pub(crate) enum CExpr {
    Hyper(usize),
    Const(f64),
    Node(usize),
    Add(Box<CExpr>, Box<CExpr>),
    Mul(Box<CExpr>, Box<CExpr>),
    Div(Box<CExpr>, Box<CExpr>),
    Square(Box<CExpr>),
    Sqrt(Box<CExpr>),
    Dot(usize, usize),
    Sum(usize),
}

impl CExpr {
    /// Element `k` of the expression (scalars broadcast).
    pub(crate) fn eval(&self, hypers: &[Dual], env: &[Vec<Dual>], k: usize) -> Dual {
        match self {
            CExpr::Hyper(i) => hypers[*i],
            CExpr::Const(c) => Dual::constant(*c),
            CExpr::Node(n) => {
                let v = &env[*n];
                if v.len() == 1 { v[0] } else { v[k] }
            }
            CExpr::Add(a, b) => a.eval(hypers, env, k) + b.eval(hypers, env, k),
            CExpr::Mul(a, b) => a.eval(hypers, env, k) * b.eval(hypers, env, k),
            CExpr::Div(a, b) => a.eval(hypers, env, k) / b.eval(hypers, env, k),
            CExpr::Square(a) => a.eval(hypers, env, k).square(),
            CExpr::Sqrt(a) => a.eval(hypers, env, k).sqrt(),
            CExpr::Dot(a, b) => {
                let mut acc = Dual::ZERO;
                for (x, y) in env[*a].iter().zip(&env[*b]) {
                    acc += *x * *y;
                }
                acc
            }
            CExpr::Sum(a) => {
                let mut acc = Dual::ZERO;
                for x in &env[*a] {
                    acc += *x;
                }
                acc
            }
        }
    }

    /// True when the value depends on no node.
    pub(crate) fn is_static(&self) -> bool {
        match self {
            CExpr::Hyper(_) | CExpr::Const(_) => true,
            CExpr::Node(_) | CExpr::Dot(..) | CExpr::Sum(_) => false,
            CExpr::Add(a, b) | CExpr::Mul(a, b) | CExpr::Div(a, b) => a.is_static() && b.is_static(),
            CExpr::Square(a) | CExpr::Sqrt(a) => a.is_static(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CNode {
    pub name: String,
    pub id: usize,
    pub family: Family,
    pub params: Vec<CExpr>,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CLayer {
    pub nodes: Vec<CNode>,
    pub discrete: bool,
    /// Index into the latent budget for continuous layers.
    pub budget_slot: usize,
}

/// A model with names resolved against a hyperparameter vector.
#[derive(Debug, Clone)]
pub(crate) struct BoundModel {
    pub layers: Vec<CLayer>,
    pub output: CNode,
    pub output_mode: OutputMode,
    pub n_nodes: usize,
    pub hypers: Vec<Dual>,
    pub names: Vec<String>,
}

impl LayeredModel {
    /// Resolve names against `lambda`; hyperparameter `i` of `lambda`
    /// carries a unit partial in dual slot `i`.
    pub(crate) fn bind(&self, lambda: &UnconstrainedVector) -> Result<BoundModel> {
        self.validate()?;
        if lambda.len() > MAX_PARAMS {
            return Err(Error::Model(format!("at most {MAX_PARAMS} hyperparameters are supported, got {}", lambda.len())));
        }
        for name in self.hyper_names() {
            if lambda.index_of(&name).is_none() {
                return Err(Error::Model(format!("hyperparameter {name} is not bound")));
            }
        }
        let mut ids: HashMap<&str, usize> = HashMap::new();
        for node in self.layers.iter().flatten() {
            let next = ids.len();
            ids.insert(&node.name, next);
        }
        let compile = |e: &Expr| -> CExpr { compile_expr(e, lambda, &ids) };
        let mut slot = 0;
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let discrete = is_discrete_layer(layer);
                let l = CLayer {
                    nodes: layer
                        .iter()
                        .map(|n| CNode {
                            name: n.name.clone(),
                            id: ids[n.name.as_str()],
                            family: n.family,
                            params: n.params.iter().map(compile).collect(),
                            width: n.width,
                        })
                        .collect(),
                    discrete,
                    budget_slot: slot,
                };
                if !discrete {
                    slot += 1;
                }
                l
            })
            .collect();
        let output = CNode {
            name: self.output.name.clone(),
            id: ids.len(),
            family: self.output.family,
            params: self.output.params.iter().map(compile).collect(),
            width: 1,
        };
        let hypers = lambda.constrained().into_iter().enumerate().map(|(i, h)| Dual::seed(h, i, 1.0)).collect();
        Ok(BoundModel {
            layers,
            output,
            output_mode: self.output.mode,
            n_nodes: ids.len(),
            hypers,
            names: lambda.names.clone(),
        })
    }
}

fn compile_expr(e: &Expr, lambda: &UnconstrainedVector, ids: &HashMap<&str, usize>) -> CExpr {
    let c = |x: &Expr| Box::new(compile_expr(x, lambda, ids));
    match e {
        Expr::Hyper(h) => CExpr::Hyper(lambda.index_of(h).expect("validated")),
        Expr::Const(v) => CExpr::Const(*v),
        Expr::Node(n) => CExpr::Node(ids[n.as_str()]),
        Expr::Add(a, b) => CExpr::Add(c(a), c(b)),
        Expr::Mul(a, b) => CExpr::Mul(c(a), c(b)),
        Expr::Div(a, b) => CExpr::Div(c(a), c(b)),
        Expr::Square(a) => CExpr::Square(c(a)),
        Expr::Sqrt(a) => CExpr::Sqrt(c(a)),
        Expr::Dot(a, b) => CExpr::Dot(ids[a.as_str()], ids[b.as_str()]),
        Expr::Sum(a) => CExpr::Sum(ids[a.as_str()]),
    }
}
