import { execFileSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export const PYTHON = process.env.SPARS_PYTHON ?? "python3";

export interface ToyEnvOptions {
  numJobs?: number;
  numNodes?: number;
  arrivalRate?: number;
  meanRuntime?: number;
  dtSeconds?: number;
  stallGuard?: number;
  seed?: number;
  switchOn?: number;
  switchOff?: number;
}

export interface ToyEnv {
  dir: string;
  envConfig: string;
  agentConfig: string;
  numNodes: number;
}

/** Materialize platform/workload/config files for a toy environment. */
export function makeToyEnv(options: ToyEnvOptions = {}): ToyEnv {
  const {
    numJobs = 8,
    numNodes = 4,
    arrivalRate = 1 / 6000,
    meanRuntime = 600,
    dtSeconds = 1800,
    stallGuard = 7200,
    seed = 11,
    switchOn = 300,
    switchOff = 120,
  } = options;
  const dir = mkdtempSync(join(tmpdir(), "spars-agent-test-"));

  execFileSync(PYTHON, [
    "-c",
    `from pathlib import Path
from spars.platform import uniform_platform, serialize_platform
Path(${JSON.stringify(join(dir, "platform.json"))}).write_bytes(
    serialize_platform(uniform_platform(${numNodes}, switch_on_s=${switchOn}, switch_off_s=${switchOff})))
`,
  ]);
  execFileSync(PYTHON, [
    "-m",
    "spars",
    "gen",
    "-o",
    join(dir, "workload.json"),
    "--num-jobs",
    String(numJobs),
    "--arrival-rate",
    String(arrivalRate),
    "--mean-runtime",
    String(meanRuntime),
    "--cv",
    "0.3",
    "--min-res",
    "1",
    "--max-res",
    String(Math.max(1, Math.floor(numNodes / 2))),
    "--nb-res",
    String(numNodes),
    "--seed",
    String(seed),
  ]);

  const envConfig = join(dir, "env.yaml");
  writeFileSync(
    envConfig,
    [
      "paths:",
      `  workload: "${join(dir, "workload.json")}"`,
      `  platform: "${join(dir, "platform.json")}"`,
      `  output: "${join(dir, "env_out")}"`,
      "run:",
      '  algorithm: "easy_psas_ipm"',
      '  overrun_policy: "terminate"',
      "  timeout: 300",
      "rl:",
      "  enabled: true",
      '  type: "discrete"',
      `  dt: ${dtSeconds}`,
      "  epochs: 1",
      `  stall_guard: ${stallGuard}`,
      "logging:",
      '  level: "ERROR"',
      `seed: ${seed}`,
      "",
    ].join("\n"),
  );

  const agentConfig = join(dir, "rl.yaml");
  writeFileSync(
    agentConfig,
    [
      "env:",
      `  cmd: ["${PYTHON}", "-m", "spars", "serve-env", "-c", "${envConfig}"]`,
      "agent:",
      "  obs_dim: 6",
      `  num_nodes: ${numNodes}`,
      '  type: "discrete"',
      "  epochs: 3",
      "  lr: 0.0003",
      "  seed: 7",
      "paths:",
      `  checkpoint: "${join(dir, "checkpoint.json")}"`,
      `  returns: "${join(dir, "returns.csv")}"`,
      "eval:",
      `  spars_cmd: ["${PYTHON}", "-m", "spars"]`,
      `  run_config: "${envConfig}"`,
      `  output: "${join(dir, "eval_out")}"`,
      `  comparison: "${join(dir, "eval_out", "agent_comparison.csv")}"`,
      "",
    ].join("\n"),
  );

  return { dir, envConfig, agentConfig, numNodes };
}
