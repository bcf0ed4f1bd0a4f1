//! Times one forward/backward pass of the classifier at a few widths.

use std::time::Instant;

use regmixmatch::diffcore::{Mode, SmallConvNet, Tensor};

fn main() {
    let n = 64;
    let data: Vec<f32> = (0..n * 3 * 32 * 32).map(|i| ((i * 31 % 97) as f32) / 48.0 - 1.0).collect();
    let x = Tensor::new(vec![n, 3, 32, 32], data).unwrap();
    for widths in [[32, 64, 128], [16, 32, 64], [8, 16, 32]] {
        let net = SmallConvNet::with_widths(3, 10, widths);
        let p = net.init(0);
        let t = Instant::now();
        let reps = 3;
        for _ in 0..reps {
            let mut f = net.forward(&p, &x, Mode::Train).unwrap();
            let l = f.tape.sum(f.logits).unwrap();
            f.tape.backward(l).unwrap();
        }
        let train = t.elapsed().as_secs_f64() / reps as f64;
        let t = Instant::now();
        net.forward(&p, &x, Mode::Eval).unwrap();
        let eval = t.elapsed().as_secs_f64();
        println!("{widths:?}: train {:.1} ms/img, eval {:.1} ms/img", train * 1e3 / n as f64, eval * 1e3 / n as f64);
    }
}
