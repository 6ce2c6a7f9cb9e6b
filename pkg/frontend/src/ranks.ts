import type { Selections } from './types.js';

export type RankResult =
  | { ok: true; ranks: number[] }
  | { ok: false; reason: string };

/**
 * Convert badge selections into the canonical mid-rank vector the server
 * expects.
 *
 * Annotators assign ordinal badges 1..G; a tie is expressed by giving the
 * same badge to several candidates. A combination is valid when every badge
 * value equals 1 plus the number of strictly better candidates, i.e. a tie
 * block occupies its lowest position: 1,1,3,4 is valid, 1,1,2,4 and 2,2,3,4
 * are not. Tied candidates then share the mean of the positions their block
 * spans (1,1,3,4 becomes 1.5,1.5,3,4).
 */
export function midranksFromSelections(selections: Selections): RankResult {
  const picked: number[] = [];
  for (const value of selections) {
    if (value === null) {
      return { ok: false, reason: 'every candidate needs a rank before submitting' };
    }
    picked.push(value);
  }
  const total = picked.length;
  if (total < 2) {
    return { ok: false, reason: 'a task needs at least two candidates' };
  }

  const counts = new Map<number, number>();
  for (const value of picked) {
    if (!Number.isInteger(value) || value < 1 || value > total) {
      return { ok: false, reason: `ranks must be whole numbers between 1 and ${total}` };
    }
    counts.set(value, (counts.get(value) ?? 0) + 1);
  }

  const midrankOf = new Map<number, number>();
  for (const [value, count] of counts) {
    const below = picked.filter((other) => other < value).length;
    if (value !== below + 1) {
      return {
        ok: false,
        reason:
          `rank ${value} is not valid here: tied candidates must share the ` +
          'lowest open position (for example 1,1,3,4 rather than 2,2,3,4)',
      };
    }
    // Tie block occupies positions value..value+count-1; share their mean.
    midrankOf.set(value, value + (count - 1) / 2);
  }

  return { ok: true, ranks: picked.map((value) => midrankOf.get(value) as number) };
}

export function isCompleteSelection(selections: Selections): boolean {
  return selections.length > 0 && selections.every((value) => value !== null);
}

/** Mid-rank vectors over G items always sum to G(G+1)/2. */
export function rankSum(ranks: ReadonlyArray<number>): number {
  return ranks.reduce((acc, value) => acc + value, 0);
}
