/** Agent-side configuration (rl.yaml): environment command and hyperparameters. */
import { readFileSync } from "node:fs";
import { dirname, isAbsolute, resolve } from "node:path";
import yaml from "js-yaml";

import { DEFAULT_HYPER, type Hyper, type Mode } from "./model.js";

export interface AgentConfig {
  envCmd: string[];
  obsDim: number;
  numNodes: number;
  mode: Mode;
  epochs: number;
  seed: number;
  hyper: Hyper;
  checkpointPath: string;
  returnsPath: string;
  eval: {
    sparsCmd: string[];
    runConfig: string | null;
    outputDir: string;
    comparisonPath: string;
  };
}

function asStringList(value: unknown, field: string): string[] {
  if (!Array.isArray(value) || !value.every((x) => typeof x === "string")) {
    throw new Error(`${field}: expected a list of strings`);
  }
  return value;
}

export function loadAgentConfig(path: string, overrides: Partial<{ epochs: number; lr: number; seed: number }> = {}): AgentConfig {
  const doc = (yaml.load(readFileSync(path, "utf-8")) ?? {}) as Record<string, any>;
  const base = dirname(resolve(path));
  const rel = (p: string) => (isAbsolute(p) ? p : resolve(base, p));

  const env = doc.env ?? {};
  if (!env.cmd) throw new Error("env.cmd: required (command that serves the environment protocol)");
  const agent = doc.agent ?? {};
  const paths = doc.paths ?? {};
  const evalDoc = doc.eval ?? {};

  const mode = (agent.type ?? "discrete") as Mode;
  if (mode !== "discrete" && mode !== "continuous") {
    throw new Error(`agent.type: must be "discrete" or "continuous", got ${JSON.stringify(mode)}`);
  }
  const numNodes = Number(agent.num_nodes ?? 0);
  if (!Number.isInteger(numNodes) || numNodes < 1) {
    throw new Error("agent.num_nodes: required positive integer (sizes the action space)");
  }

  const hyper: Hyper = {
    ...DEFAULT_HYPER,
    lr: overrides.lr ?? Number(agent.lr ?? DEFAULT_HYPER.lr),
    gamma: Number(agent.gamma ?? DEFAULT_HYPER.gamma),
    entropyCoef: Number(agent.entropy ?? DEFAULT_HYPER.entropyCoef),
    valueCoef: Number(agent.value_coef ?? DEFAULT_HYPER.valueCoef),
    hidden: Number(agent.hidden ?? DEFAULT_HYPER.hidden),
    normalizeAdvantages: Boolean(agent.normalize_advantages ?? DEFAULT_HYPER.normalizeAdvantages),
  };

  return {
    envCmd: asStringList(env.cmd, "env.cmd"),
    obsDim: Number(agent.obs_dim ?? 6),
    numNodes,
    mode,
    epochs: overrides.epochs ?? Number(agent.epochs ?? 1),
    seed: overrides.seed ?? Number(agent.seed ?? 0),
    hyper,
    checkpointPath: rel(String(paths.checkpoint ?? "checkpoint.json")),
    returnsPath: rel(String(paths.returns ?? "returns.csv")),
    eval: {
      sparsCmd: evalDoc.spars_cmd ? asStringList(evalDoc.spars_cmd, "eval.spars_cmd") : ["spars"],
      runConfig: evalDoc.run_config ? rel(String(evalDoc.run_config)) : null,
      outputDir: rel(String(evalDoc.output ?? "eval_out")),
      comparisonPath: rel(String(evalDoc.comparison ?? "eval_out/agent_comparison.csv")),
    },
  };
}
