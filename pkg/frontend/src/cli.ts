#!/usr/bin/env node
/** CLI: `spars-agent train -c rl.yaml` / `spars-agent eval -c rl.yaml --checkpoint x.json`. */
import { evaluate, train } from "./agent.js";
import { loadAgentConfig } from "./config.js";

function usage(): never {
  console.error(
    "usage:\n" +
      "  spars-agent train -c rl.yaml [--epochs N] [--lr X] [--seed N]\n" +
      "  spars-agent eval  -c rl.yaml --checkpoint path.json",
  );
  process.exit(2);
}

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("-") || value === undefined) usage();
    flags.set(key.replace(/^--?/, ""), value);
  }
  return flags;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  if (command !== "train" && command !== "eval") usage();
  const flags = parseFlags(rest);
  const configPath = flags.get("c") ?? flags.get("config");
  if (!configPath) usage();

  const overrides: { epochs?: number; lr?: number; seed?: number } = {};
  if (flags.has("epochs")) overrides.epochs = Number(flags.get("epochs"));
  if (flags.has("lr")) overrides.lr = Number(flags.get("lr"));
  if (flags.has("seed")) overrides.seed = Number(flags.get("seed"));
  const cfg = loadAgentConfig(configPath, overrides);

  if (command === "train") {
    const result = await train(cfg);
    const last = result.episodes[result.episodes.length - 1];
    console.error(
      `trained ${result.episodes.length} episode(s); ` +
        `last return ${last ? last.episodeReturn.toFixed(4) : "n/a"}; ` +
        `checkpoint: ${cfg.checkpointPath}; returns: ${cfg.returnsPath}`,
    );
    return 0;
  }

  const checkpoint = flags.get("checkpoint");
  if (!checkpoint) usage();
  const result = await evaluate(cfg, checkpoint);
  console.error(
    `evaluation return written to ${cfg.eval.comparisonPath}; ` +
      `episode jobs: ${result.summary.job_count}`,
  );
  return 0;
}

main().then(
  (code) => process.exit(code),
  (error) => {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    process.exit(1);
  },
);
