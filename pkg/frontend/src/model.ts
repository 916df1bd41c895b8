/**
 * Actor-critic network: shared 2x64 tanh trunk, a policy head over discrete
 * powered-on targets (num_nodes + 1 actions) or a squashed Gaussian for the
 * continuous control mode, and a scalar value head. One Adam update per
 * episode on the Monte-Carlo advantage.
 */
import { Linear, softmax, tanhBackward, tanhVec } from "./mlp.js";
import { Rng } from "./rng.js";
import type { Transition } from "./memory.js";

export interface Hyper {
  lr: number;
  gamma: number;
  entropyCoef: number;
  valueCoef: number;
  hidden: number;
  normalizeAdvantages: boolean;
}

export const DEFAULT_HYPER: Hyper = {
  lr: 0.0003,
  gamma: 0.99,
  entropyCoef: 0.01,
  valueCoef: 0.5,
  hidden: 64,
  normalizeAdvantages: true,
};

export type Mode = "discrete" | "continuous";

interface Forward {
  h1: Float64Array;
  h2: Float64Array;
  policyOut: Float64Array;
  value: number;
}

export class ActorCritic {
  readonly obsDim: number;
  readonly numNodes: number;
  readonly mode: Mode;
  readonly hyper: Hyper;
  readonly numActions: number; // discrete targets 0..numNodes
  private trunk1: Linear;
  private trunk2: Linear;
  private policyHead: Linear;
  private valueHead: Linear;
  private logStd: number; // continuous mode only
  private logStdGrad = 0;
  private logStdM = 0;
  private logStdV = 0;
  private adamT = 0;
  readonly rng: Rng;

  constructor(obsDim: number, numNodes: number, mode: Mode, hyper: Partial<Hyper> = {}, seed = 0) {
    this.obsDim = obsDim;
    this.numNodes = numNodes;
    this.mode = mode;
    this.hyper = { ...DEFAULT_HYPER, ...hyper };
    this.numActions = numNodes + 1;
    this.rng = new Rng(seed);
    const h = this.hyper.hidden;
    this.trunk1 = new Linear(obsDim, h, this.rng);
    this.trunk2 = new Linear(h, h, this.rng);
    this.policyHead = new Linear(h, this.mode === "discrete" ? this.numActions : 1, this.rng);
    this.valueHead = new Linear(h, 1, this.rng);
    this.logStd = Math.log(0.3);
  }

  private forward(obs: Float64Array): Forward {
    const h1 = tanhVec(this.trunk1.forward(obs));
    const h2 = tanhVec(this.trunk2.forward(h1));
    return {
      h1,
      h2,
      policyOut: this.policyHead.forward(h2),
      value: this.valueHead.forward(h2)[0],
    };
  }

  /** Pick an action; greedy = argmax / mean. Always within the legal range. */
  act(obs: number[], greedy = false): number {
    const out = this.forward(Float64Array.from(obs));
    if (this.mode === "discrete") {
      const probs = softmax(out.policyOut);
      if (greedy) {
        let best = 0;
        for (let i = 1; i < probs.length; i++) if (probs[i] > probs[best]) best = i;
        return best;
      }
      return this.rng.categorical(probs);
    }
    const mu = 0.5 * (Math.tanh(out.policyOut[0]) + 1);
    if (greedy) return Math.min(1, Math.max(0, mu));
    const sample = mu + Math.exp(this.logStd) * this.rng.gauss();
    return Math.min(1, Math.max(0, sample));
  }

  value(obs: number[]): number {
    return this.forward(Float64Array.from(obs)).value;
  }

  /** One advantage actor-critic update over a finished episode. */
  update(episode: Transition[]): { loss: number; meanReturn: number } {
    const T = episode.length;
    if (T === 0) return { loss: 0, meanReturn: 0 };
    const { gamma, entropyCoef, valueCoef, lr, normalizeAdvantages } = this.hyper;

    const returns = new Float64Array(T);
    let acc = 0;
    for (let t = T - 1; t >= 0; t--) {
      acc = episode[t].reward + gamma * acc;
      returns[t] = acc;
    }

    const observations = episode.map((tr) => Float64Array.from(tr.observation));
    const forwards = observations.map((obs) => this.forward(obs));
    const advantages = new Float64Array(T);
    for (let t = 0; t < T; t++) advantages[t] = returns[t] - forwards[t].value;
    if (normalizeAdvantages && T > 1) {
      let mean = 0;
      for (const a of advantages) mean += a;
      mean /= T;
      let variance = 0;
      for (const a of advantages) variance += (a - mean) * (a - mean);
      const std = Math.sqrt(variance / T) + 1e-8;
      for (let t = 0; t < T; t++) advantages[t] = (advantages[t] - mean) / std;
    }

    this.trunk1.zeroGrad();
    this.trunk2.zeroGrad();
    this.policyHead.zeroGrad();
    this.valueHead.zeroGrad();
    this.logStdGrad = 0;

    let loss = 0;
    for (let t = 0; t < T; t++) {
      const fwd = forwards[t];
      const adv = advantages[t];
      const valueErr = fwd.value - returns[t];
      loss += 0.5 * valueCoef * valueErr * valueErr;

      let dPolicy: Float64Array;
      if (this.mode === "discrete") {
        const action = episode[t].action as number;
        const probs = softmax(fwd.policyOut);
        let entropy = 0;
        for (const p of probs) if (p > 0) entropy -= p * Math.log(p);
        loss += -Math.log(Math.max(probs[action], 1e-12)) * adv - entropyCoef * entropy;
        dPolicy = new Float64Array(probs.length);
        for (let i = 0; i < probs.length; i++) {
          const onehot = i === action ? 1 : 0;
          // d(-logpi*A)/dz + d(-c*H)/dz
          dPolicy[i] = (probs[i] - onehot) * adv + entropyCoef * probs[i] * (Math.log(Math.max(probs[i], 1e-12)) + entropy);
        }
      } else {
        const action = episode[t].action as number;
        const muRaw = fwd.policyOut[0];
        const tanhMu = Math.tanh(muRaw);
        const mu = 0.5 * (tanhMu + 1);
        const std = Math.exp(this.logStd);
        const z = (action - mu) / std;
        const logp = -0.5 * z * z - this.logStd - 0.5 * Math.log(2 * Math.PI);
        const entropy = this.logStd + 0.5 * Math.log(2 * Math.PI * Math.E);
        loss += -logp * adv - entropyCoef * entropy;
        // dlogp/dmu = z/std, dmu/dmuRaw = 0.5*(1 - tanh^2), loss = -logp*adv
        const dMuRaw = -adv * (z / std) * 0.5 * (1 - tanhMu * tanhMu);
        dPolicy = Float64Array.of(dMuRaw);
        this.logStdGrad += -adv * (z * z - 1) - entropyCoef;
      }

      const dValue = Float64Array.of(valueCoef * valueErr);
      const dH2FromPolicy = this.policyHead.backward(fwd.h2, dPolicy);
      const dH2FromValue = this.valueHead.backward(fwd.h2, dValue);
      const dH2 = new Float64Array(dH2FromPolicy.length);
      for (let i = 0; i < dH2.length; i++) dH2[i] = dH2FromPolicy[i] + dH2FromValue[i];
      const dH1 = this.trunk2.backward(fwd.h1, tanhBackward(fwd.h2, dH2));
      this.trunk1.backward(observations[t], tanhBackward(fwd.h1, dH1));
    }

    const scale = 1 / T;
    this.trunk1.scaleGrad(scale);
    this.trunk2.scaleGrad(scale);
    this.policyHead.scaleGrad(scale);
    this.valueHead.scaleGrad(scale);
    this.logStdGrad *= scale;

    this.adamT += 1;
    this.trunk1.adamStep(lr, this.adamT);
    this.trunk2.adamStep(lr, this.adamT);
    this.policyHead.adamStep(lr, this.adamT);
    this.valueHead.adamStep(lr, this.adamT);
    if (this.mode === "continuous") {
      this.logStdM = 0.9 * this.logStdM + 0.1 * this.logStdGrad;
      this.logStdV = 0.999 * this.logStdV + 0.001 * this.logStdGrad * this.logStdGrad;
      const c1 = 1 - Math.pow(0.9, this.adamT);
      const c2 = 1 - Math.pow(0.999, this.adamT);
      this.logStd -= (lr * (this.logStdM / c1)) / (Math.sqrt(this.logStdV / c2) + 1e-8);
    }

    let total = 0;
    for (const tr of episode) total += tr.reward;
    return { loss: loss / T, meanReturn: total };
  }

  toCheckpoint(meta: Record<string, unknown> = {}): string {
    return JSON.stringify(
      {
        format: "spars-agent-checkpoint/1",
        obs_dim: this.obsDim,
        num_nodes: this.numNodes,
        mode: this.mode,
        hidden: this.hyper.hidden,
        log_std: this.logStd,
        layers: {
          trunk1: this.trunk1.exportWeights(),
          trunk2: this.trunk2.exportWeights(),
          policy: this.policyHead.exportWeights(),
          value: this.valueHead.exportWeights(),
        },
        meta,
      },
      null,
      1,
    );
  }

  static fromCheckpoint(text: string, expectedObsDim: number): ActorCritic {
    const doc = JSON.parse(text);
    if (doc.format !== "spars-agent-checkpoint/1") {
      throw new Error(`not an agent checkpoint (format: ${doc.format})`);
    }
    if (doc.obs_dim !== expectedObsDim) {
      throw new Error(
        `checkpoint obs_dim ${doc.obs_dim} is incompatible with the environment's ${expectedObsDim}`,
      );
    }
    const model = new ActorCritic(doc.obs_dim, doc.num_nodes, doc.mode, { hidden: doc.hidden });
    model.trunk1.importWeights(doc.layers.trunk1);
    model.trunk2.importWeights(doc.layers.trunk2);
    model.policyHead.importWeights(doc.layers.policy);
    model.valueHead.importWeights(doc.layers.value);
    model.logStd = doc.log_std;
    return model;
  }
}
