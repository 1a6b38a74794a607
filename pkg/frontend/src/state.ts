// Console session state. One in-flight request per kind; stale responses
// (superseded by a newer request) are discarded by sequence number.

import type { SyntheticRct } from "./api.js";

export interface ConsoleState {
  queryText: string;
  rct: SyntheticRct | null;
  userEdited: boolean;
  predictorId: string;
  session: string;
  synthSeq: number;
  forecastSeq: number;
}

export function createState(session: string): ConsoleState {
  return {
    queryText: "",
    rct: null,
    userEdited: false,
    predictorId: "",
    session,
    synthSeq: 0,
    forecastSeq: 0
  };
}

export function beginSynth(state: ConsoleState): number {
  state.userEdited = false;
  return ++state.synthSeq;
}

export function isCurrentSynth(state: ConsoleState, seq: number): boolean {
  return seq === state.synthSeq;
}

export function beginForecast(state: ConsoleState): number {
  return ++state.forecastSeq;
}

export function isCurrentForecast(state: ConsoleState, seq: number): boolean {
  return seq === state.forecastSeq;
}

export function setGeneratedRct(state: ConsoleState, rct: SyntheticRct): void {
  state.rct = rct;
  state.userEdited = false;
}

// Field edits are stored byte-for-byte; an emptied field becomes absent.
export function applyEdit(
  state: ConsoleState,
  field: "intervention" | "outcome",
  rawValue: string
): void {
  const current = state.rct ?? { intervention: null, outcome: null };
  state.rct = { ...current, [field]: rawValue === "" ? null : rawValue };
  state.userEdited = true;
}

export function restoreFromHistory(
  state: ConsoleState,
  queryText: string,
  rct: SyntheticRct | null
): void {
  state.queryText = queryText;
  state.rct = rct;
  // A restored representation is re-sent verbatim, like a user edit.
  state.userEdited = rct !== null;
}

export const BADGE_LABELS: Record<string, string> = {
  Positive: "Positive",
  Negative: "Negative",
  NonSignificant: "Non-significant"
};

export function badgeLabel(significanceClass: string): string {
  return BADGE_LABELS[significanceClass] ?? significanceClass;
}
