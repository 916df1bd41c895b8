/**
 * Minimal dense-layer toolkit with hand-rolled backprop and Adam.
 *
 * The networks here are tiny (observation width 6, two hidden layers of 64),
 * so plain Float64Array math is faster than spinning up a tensor runtime and
 * keeps every operation bit-reproducible under a fixed seed.
 */
import { Rng } from "./rng.js";

export class Linear {
  readonly inDim: number;
  readonly outDim: number;
  w: Float64Array; // row-major [out][in]
  b: Float64Array;
  gw: Float64Array;
  gb: Float64Array;
  private mw: Float64Array;
  private vw: Float64Array;
  private mb: Float64Array;
  private vb: Float64Array;

  constructor(inDim: number, outDim: number, rng: Rng) {
    this.inDim = inDim;
    this.outDim = outDim;
    const limit = Math.sqrt(6 / (inDim + outDim));
    this.w = new Float64Array(inDim * outDim);
    for (let i = 0; i < this.w.length; i++) this.w[i] = (rng.next() * 2 - 1) * limit;
    this.b = new Float64Array(outDim);
    this.gw = new Float64Array(this.w.length);
    this.gb = new Float64Array(outDim);
    this.mw = new Float64Array(this.w.length);
    this.vw = new Float64Array(this.w.length);
    this.mb = new Float64Array(outDim);
    this.vb = new Float64Array(outDim);
  }

  forward(x: Float64Array): Float64Array {
    const y = new Float64Array(this.outDim);
    for (let o = 0; o < this.outDim; o++) {
      let acc = this.b[o];
      const row = o * this.inDim;
      for (let i = 0; i < this.inDim; i++) acc += this.w[row + i] * x[i];
      y[o] = acc;
    }
    return y;
  }

  /** Accumulate parameter gradients for (x, dy) and return dL/dx. */
  backward(x: Float64Array, dy: Float64Array): Float64Array {
    const dx = new Float64Array(this.inDim);
    for (let o = 0; o < this.outDim; o++) {
      const g = dy[o];
      const row = o * this.inDim;
      this.gb[o] += g;
      for (let i = 0; i < this.inDim; i++) {
        this.gw[row + i] += g * x[i];
        dx[i] += this.w[row + i] * g;
      }
    }
    return dx;
  }

  zeroGrad(): void {
    this.gw.fill(0);
    this.gb.fill(0);
  }

  scaleGrad(factor: number): void {
    for (let i = 0; i < this.gw.length; i++) this.gw[i] *= factor;
    for (let i = 0; i < this.gb.length; i++) this.gb[i] *= factor;
  }

  adamStep(lr: number, t: number, beta1 = 0.9, beta2 = 0.999, eps = 1e-8): void {
    const c1 = 1 - Math.pow(beta1, t);
    const c2 = 1 - Math.pow(beta2, t);
    for (let i = 0; i < this.w.length; i++) {
      this.mw[i] = beta1 * this.mw[i] + (1 - beta1) * this.gw[i];
      this.vw[i] = beta2 * this.vw[i] + (1 - beta2) * this.gw[i] * this.gw[i];
      this.w[i] -= (lr * (this.mw[i] / c1)) / (Math.sqrt(this.vw[i] / c2) + eps);
    }
    for (let i = 0; i < this.b.length; i++) {
      this.mb[i] = beta1 * this.mb[i] + (1 - beta1) * this.gb[i];
      this.vb[i] = beta2 * this.vb[i] + (1 - beta2) * this.gb[i] * this.gb[i];
      this.b[i] -= (lr * (this.mb[i] / c1)) / (Math.sqrt(this.vb[i] / c2) + eps);
    }
  }

  exportWeights(): { w: number[]; b: number[] } {
    return { w: Array.from(this.w), b: Array.from(this.b) };
  }

  importWeights(data: { w: number[]; b: number[] }): void {
    if (data.w.length !== this.w.length || data.b.length !== this.b.length) {
      throw new Error(
        `weight shape mismatch: got ${data.w.length}/${data.b.length}, ` +
          `expected ${this.w.length}/${this.b.length}`,
      );
    }
    this.w.set(data.w);
    this.b.set(data.b);
  }
}

export function tanhVec(x: Float64Array): Float64Array {
  const y = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) y[i] = Math.tanh(x[i]);
  return y;
}

/** Backward through tanh given its *output* y: d/dx = 1 - y^2. */
export function tanhBackward(y: Float64Array, dy: Float64Array): Float64Array {
  const dx = new Float64Array(y.length);
  for (let i = 0; i < y.length; i++) dx[i] = dy[i] * (1 - y[i] * y[i]);
  return dx;
}

export function softmax(z: Float64Array): Float64Array {
  let max = -Infinity;
  for (const v of z) max = Math.max(max, v);
  const out = new Float64Array(z.length);
  let sum = 0;
  for (let i = 0; i < z.length; i++) {
    out[i] = Math.exp(z[i] - max);
    sum += out[i];
  }
  for (let i = 0; i < z.length; i++) out[i] /= sum;
  return out;
}
