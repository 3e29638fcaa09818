//! A chain of Householder reflections is orthogonal: norms and inner products
//! survive, and a single reflection undoes itself.

use anonbench::corpus::dot;
use anonbench::ohnn::{householder_apply, init_ohnn};
use anonbench::Result;

fn main() -> Result<()> {
    let y = householder_apply(&[0.0, 1.0], &[1.0, 2.0])?;
    println!("reflect (1, 2) across the x-axis: {y:?}");

    let params = init_ohnn(8, 8, 1, 50)?;
    let x = [0.3, -1.2, 0.5, 0.0, 2.0, -0.7, 0.1, 0.9];
    let z = [1.0, 0.0, -0.5, 0.25, 0.0, 0.3, -1.1, 0.4];
    let (fx, fz) = (params.forward(&x), params.forward(&z));
    println!("|x| = {:.12}  |f(x)| = {:.12}", dot(&x, &x).sqrt(), dot(&fx, &fx).sqrt());
    println!("<x,z> = {:.12}  <f(x),f(z)> = {:.12}", dot(&x, &z), dot(&fx, &fz));

    let single = init_ohnn(8, 1, 1, 3)?;
    let back = single.forward(&single.forward(&x));
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("one reflection applied twice, max deviation {err:.2e}");
    Ok(())
}
