/**
 * Client side of the environment's line-delimited JSON protocol.
 *
 * The environment is a spawned subprocess speaking on its stdin/stdout:
 * one JSON object per line, UTF-8. Unknown keys are ignored. A transcript
 * ring buffer of recent raw lines is kept for protocol-violation reports.
 */
import { spawn, type ChildProcessByStdio } from "node:child_process";
import { createInterface, type Interface } from "node:readline";
import type { Readable, Writable } from "node:stream";

export interface ObsMessage {
  type: "obs";
  t: number;
  features: number[];
  reward: number | null;
  done: boolean;
  episode: number;
}

export interface SummaryMessage {
  type: "episode_summary";
  episode: number;
  [key: string]: unknown;
}

export type EnvMessage = ObsMessage | SummaryMessage | { type: "error"; msg: string } | { type: string };

const TRANSCRIPT_LINES = 40;

export class ProtocolViolation extends Error {
  constructor(message: string, transcript: string[]) {
    super(`${message}\n--- last protocol lines ---\n${transcript.join("\n")}`);
  }
}

export class EnvConnection {
  private child: ChildProcessByStdio<Writable, Readable, null>;
  private lines: Interface;
  private queue: EnvMessage[] = [];
  private waiters: Array<(msg: EnvMessage | null) => void> = [];
  private closed = false;
  private transcript: string[] = [];

  constructor(cmd: string[]) {
    if (cmd.length === 0) throw new Error("empty environment command");
    this.child = spawn(cmd[0], cmd.slice(1), { stdio: ["pipe", "pipe", "inherit"] });
    this.lines = createInterface({ input: this.child.stdout });
    this.lines.on("line", (line) => {
      this.remember(`<< ${line}`);
      let message: EnvMessage;
      try {
        message = JSON.parse(line);
      } catch {
        // garbage from the env side: surface it as a violation at recv time
        message = { type: "__garbage__" };
      }
      const waiter = this.waiters.shift();
      if (waiter) waiter(message);
      else this.queue.push(message);
    });
    this.lines.on("close", () => {
      this.closed = true;
      for (const waiter of this.waiters.splice(0)) waiter(null);
    });
  }

  private remember(line: string): void {
    this.transcript.push(line);
    if (this.transcript.length > TRANSCRIPT_LINES) this.transcript.shift();
  }

  violation(message: string): ProtocolViolation {
    return new ProtocolViolation(message, this.transcript);
  }

  /** Next message, or null once the environment hangs up. */
  recv(): Promise<EnvMessage | null> {
    if (this.queue.length > 0) return Promise.resolve(this.queue.shift()!);
    if (this.closed) return Promise.resolve(null);
    return new Promise((resolve) => this.waiters.push(resolve));
  }

  /** Next observation; summaries are returned too (caller dispatches). */
  async recvExpected(): Promise<ObsMessage | SummaryMessage> {
    for (;;) {
      const message = await this.recv();
      if (message === null) throw this.violation("environment closed mid-episode");
      if (message.type === "obs") return message as ObsMessage;
      if (message.type === "episode_summary") return message as SummaryMessage;
      if (message.type === "error") {
        // the env rejected something we sent and will resend the observation
        continue;
      }
      throw this.violation(`unexpected message type ${JSON.stringify(message)}`);
    }
  }

  sendAction(value: number | number[]): void {
    const line = JSON.stringify({ type: "action", value });
    this.remember(`>> ${line}`);
    this.child.stdin.write(line + "\n");
  }

  async close(): Promise<number> {
    this.child.stdin.end();
    if (this.child.exitCode !== null) return this.child.exitCode;
    return new Promise((resolve) => this.child.once("exit", (code) => resolve(code ?? -1)));
  }
}
