/**
 * Training and evaluation loops over the environment protocol.
 *
 * Training runs one advantage actor-critic update per finished episode and
 * records a per-episode return log; evaluation rolls the greedy policy and
 * assembles a comparison CSV next to the simulator CLI's own always-on and
 * auto-on/off baselines for the same workload and seed.
 */
import { execFileSync } from "node:child_process";
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

import type { AgentConfig } from "./config.js";
import { Memory } from "./memory.js";
import { ActorCritic } from "./model.js";
import { EnvConnection, type ObsMessage, type SummaryMessage } from "./protocol.js";

export interface EpisodeLog {
  episode: number;
  steps: number;
  episodeReturn: number;
  loss: number;
}

function toEnvAction(model: ActorCritic, action: number): number {
  // discrete actions are already clamped by construction (0..numNodes);
  // continuous actions are clamped inside act(). Clamp again before the wire.
  if (model.mode === "discrete") return Math.min(model.numNodes, Math.max(0, Math.round(action)));
  return Math.min(1, Math.max(0, action));
}

function checkObs(conn: EnvConnection, obs: ObsMessage, obsDim: number): void {
  if (!Array.isArray(obs.features) || obs.features.length !== obsDim) {
    throw conn.violation(
      `observation width ${obs.features?.length} does not match obs_dim ${obsDim}`,
    );
  }
}

export interface RolloutResult {
  episodes: EpisodeLog[];
  summaries: SummaryMessage[];
}

/**
 * Run `episodes` episodes against a fresh environment process.
 * learn=false rolls the policy greedily with no updates.
 */
export async function rollout(
  model: ActorCritic,
  cfg: AgentConfig,
  episodes: number,
  learn: boolean,
  pickAction?: (obs: ObsMessage) => number,
): Promise<RolloutResult> {
  const cmd = [...cfg.envCmd, "--episodes", String(episodes)];
  const conn = new EnvConnection(cmd);
  const memory = new Memory();
  const logs: EpisodeLog[] = [];
  const summaries: SummaryMessage[] = [];

  try {
    let message = await conn.recvExpected();
    while (logs.length < episodes) {
      if (message.type !== "obs") throw conn.violation(`expected an observation, got ${message.type}`);
      let obs = message as ObsMessage;
      checkObs(conn, obs, cfg.obsDim);
      let episodeReturn = 0;

      while (!obs.done) {
        const action = pickAction ? pickAction(obs) : model.act(obs.features, !learn);
        conn.sendAction(toEnvAction(model, action));
        const next = await conn.recvExpected();
        if (next.type !== "obs") throw conn.violation("expected the post-step observation");
        const nextObs = next as ObsMessage;
        checkObs(conn, nextObs, cfg.obsDim);
        if (nextObs.reward === null || !Number.isFinite(nextObs.reward)) {
          throw conn.violation(`non-finite reward ${nextObs.reward}`);
        }
        memory.push({
          observation: obs.features,
          action,
          reward: nextObs.reward,
          nextObservation: nextObs.features,
          done: nextObs.done,
        });
        episodeReturn += nextObs.reward;
        obs = nextObs;
      }

      const summaryMsg = await conn.recvExpected();
      if (summaryMsg.type !== "episode_summary") {
        throw conn.violation(`expected episode_summary, got ${summaryMsg.type}`);
      }
      summaries.push(summaryMsg as SummaryMessage);

      const steps = memory.length;
      const episode = memory.drain();
      const update = learn ? model.update(episode) : { loss: 0, meanReturn: episodeReturn };
      logs.push({
        episode: logs.length + 1,
        steps,
        episodeReturn,
        loss: update.loss,
      });

      if (logs.length >= episodes) break;
      message = await conn.recvExpected();
    }
  } finally {
    await conn.close();
  }
  return { episodes: logs, summaries };
}

export function returnsCsv(logs: EpisodeLog[]): string {
  const lines = ["episode,steps,return,loss"];
  for (const row of logs) {
    lines.push(`${row.episode},${row.steps},${row.episodeReturn.toFixed(9)},${row.loss.toFixed(9)}`);
  }
  return lines.join("\n") + "\n";
}

export async function train(cfg: AgentConfig): Promise<RolloutResult> {
  const model = new ActorCritic(cfg.obsDim, cfg.numNodes, cfg.mode, cfg.hyper, cfg.seed);
  const result = await rollout(model, cfg, cfg.epochs, true);
  mkdirSync(dirname(cfg.checkpointPath), { recursive: true });
  writeFileSync(
    cfg.checkpointPath,
    model.toCheckpoint({
      episodes: cfg.epochs,
      seed: cfg.seed,
      lr: cfg.hyper.lr,
      gamma: cfg.hyper.gamma,
      entropy: cfg.hyper.entropyCoef,
    }),
  );
  mkdirSync(dirname(cfg.returnsPath), { recursive: true });
  writeFileSync(cfg.returnsPath, returnsCsv(result.episodes));
  return result;
}

function agentComparisonRow(summary: SummaryMessage): string {
  // mirrors the CLI's comparison.csv columns for the agent-driven episode
  const n = (key: string) => Number(summary[key] ?? 0);
  const fields = [
    "rl_agent",
    "-",
    String(n("seed")),
    n("total_energy_j").toFixed(9),
    n("wasted_energy_j").toFixed(9),
    n("mean_waiting_s").toFixed(6),
    n("max_waiting_s").toFixed(6),
    n("utilization").toFixed(9),
    n("makespan_s").toFixed(6),
    String(n("job_count")),
    String(n("terminated_count")),
  ];
  return fields.join(",");
}

export interface EvalResult {
  summary: SummaryMessage;
  comparisonCsv: string;
}

/**
 * Greedy rollout of a checkpoint plus the CLI's own PSUS / auto-on baselines.
 * The baseline rows are copied verbatim from the CLI's sweep output, so they
 * are byte-identical to what `spars sweep` reports for the same seed.
 */
export async function evaluate(cfg: AgentConfig, checkpointPath: string): Promise<EvalResult> {
  const model = ActorCritic.fromCheckpoint(readFileSync(checkpointPath, "utf-8"), cfg.obsDim);
  const result = await rollout(model, cfg, 1, false);
  const summary = result.summaries[0];
  if (!summary) throw new Error("evaluation episode produced no summary");

  let baselineRows: string[] = [];
  let header =
    "algorithm,timeout_s,seed,total_energy_j,wasted_energy_j," +
    "mean_waiting_s,max_waiting_s,utilization,makespan_s,jobs,terminated";
  if (cfg.eval.runConfig) {
    mkdirSync(cfg.eval.outputDir, { recursive: true });
    const sweepDir = join(cfg.eval.outputDir, "baselines");
    execFileSync(
      cfg.eval.sparsCmd[0],
      [
        ...cfg.eval.sparsCmd.slice(1),
        "sweep",
        "-c",
        cfg.eval.runConfig,
        "--timeouts",
        "300",
        "--algorithm",
        "easy_psus",
        "--algorithm",
        "easy_psas_ao",
        "--output",
        sweepDir,
      ],
      { stdio: ["ignore", "ignore", "inherit"] },
    );
    const csv = readFileSync(join(sweepDir, "comparison.csv"), "utf-8").trimEnd().split("\n");
    header = csv[0];
    baselineRows = csv.slice(1);
  }

  const comparisonCsv = [header, ...baselineRows, agentComparisonRow(summary)].join("\n") + "\n";
  mkdirSync(dirname(cfg.eval.comparisonPath), { recursive: true });
  writeFileSync(cfg.eval.comparisonPath, comparisonCsv);
  return { summary, comparisonCsv };
}
