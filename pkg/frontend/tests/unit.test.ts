import { describe, expect, it } from "vitest";

import { ciRange, display4, fullPrecision } from "../src/format.js";
import {
  applyEdit,
  badgeLabel,
  beginForecast,
  createState,
  isCurrentForecast,
  restoreFromHistory
} from "../src/state.js";

describe("display formatting", () => {
  it("rounds to four decimals for display", () => {
    expect(display4(0.06024999)).toBe("0.0602");
    expect(display4(-1.19561)).toBe("-1.1956");
  });

  it("keeps full precision available", () => {
    expect(fullPrecision(0.06024999)).toBe("0.06024999");
  });

  it("renders confidence ranges", () => {
    expect(ciRange(-0.1807, 0.3011)).toBe("[-0.1807, 0.3011]");
  });
});

describe("badge labels", () => {
  it("maps the three service classes", () => {
    expect(badgeLabel("Positive")).toBe("Positive");
    expect(badgeLabel("Negative")).toBe("Negative");
    expect(badgeLabel("NonSignificant")).toBe("Non-significant");
  });

  it("passes unknown classes through untouched", () => {
    expect(badgeLabel("Mystery")).toBe("Mystery");
  });
});

describe("state transitions", () => {
  it("edits store bytes verbatim and mark the representation user-modified", () => {
    const state = createState("s");
    applyEdit(state, "intervention", "  spaced   bytes\tkept ");
    expect(state.rct?.intervention).toBe("  spaced   bytes\tkept ");
    expect(state.userEdited).toBe(true);
  });

  it("clearing a field makes it absent", () => {
    const state = createState("s");
    applyEdit(state, "outcome", "something");
    applyEdit(state, "outcome", "");
    expect(state.rct?.outcome).toBeNull();
  });

  it("stale forecast responses are discarded by sequence number", () => {
    const state = createState("s");
    const first = beginForecast(state);
    const second = beginForecast(state);
    expect(isCurrentForecast(state, first)).toBe(false);
    expect(isCurrentForecast(state, second)).toBe(true);
  });

  it("restoring a history entry re-marks the representation as user-supplied", () => {
    const state = createState("s");
    restoreFromHistory(state, "old query?", { intervention: "x", outcome: "y" });
    expect(state.queryText).toBe("old query?");
    expect(state.userEdited).toBe(true);
    restoreFromHistory(state, "bare query?", null);
    expect(state.userEdited).toBe(false);
  });
});
