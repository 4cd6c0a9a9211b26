use rand::Rng;

use crate::numerics::{dropout, dropout_backward, param_set, relu, relu_backward, softmax, DropoutMask, Linear, Scalar, Tensor};
use crate::Result;

/// `W2·Dropout(ReLU(W1·z + b1)) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

param_set!(Mlp { hidden, output });

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    dropped: Tensor<T>,
    mask: Option<DropoutMask<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, classes: usize) -> Self {
        Mlp { hidden: Linear::glorot(rng, input, hidden, true), output: Linear::glorot(rng, hidden, classes, true) }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    /// Logits for a `batch × input` matrix.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        z: &Tensor<T>,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, MlpCache<T>)> {
        let pre = self.hidden.forward(z)?;
        let (dropped, mask) = dropout(&relu(&pre), rate, training, rng)?;
        let logits = self.output.forward(&dropped)?;
        Ok((logits, MlpCache { input: z.clone(), pre, dropped, mask }))
    }

    /// Evaluation-mode logits (dropout off).
    pub fn evaluate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.output.forward(&relu(&self.hidden.forward(z)?))
    }

    /// Accumulates parameter gradients; returns `dL/dz`.
    pub fn backward(&self, c: &MlpCache<T>, dlogits: &Tensor<T>, grad: &mut Mlp<T>) -> Tensor<T> {
        let ddropped = self.output.backward(&c.dropped, dlogits, &mut grad.output);
        let dact = dropout_backward(c.mask.as_ref(), &ddropped);
        let dpre = relu_backward(&c.pre, &dact);
        self.hidden.backward(&c.input, &dpre, &mut grad.hidden)
    }
}

/// Class probabilities for one fused vector.
pub fn mlp_classify<T: Scalar, R: Rng + ?Sized>(
    z: &[T],
    params: &Mlp<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Vec<T>> {
    let x = Tensor::new(vec![1, z.len()], z.to_vec())?;
    let (logits, _) = params.forward(&x, rate, training, rng)?;
    Ok(softmax(&logits, 1)?.into_data())
}
