/** Episode buffer: transitions in order, cleared after each update. */

export interface Transition {
  observation: number[];
  action: number;
  reward: number;
  nextObservation: number[];
  done: boolean;
}

export class Memory {
  private buffer: Transition[] = [];

  push(transition: Transition): void {
    this.buffer.push(transition);
  }

  get length(): number {
    return this.buffer.length;
  }

  drain(): Transition[] {
    const episode = this.buffer;
    this.buffer = [];
    return episode;
  }
}
