// Console wiring: query panel -> editable synthetic-RCT panel -> forecast
// card -> session history. The badge and the economic marker always display
// exactly what the service reported; edits are sent byte-for-byte.

import { ApiClient, ForecastRequest, ForecastResponse, ServiceError, SyntheticRct } from "./api.js";
import { ciRange, display4, fullPrecision } from "./format.js";
import {
  ConsoleState,
  applyEdit,
  badgeLabel,
  beginForecast,
  beginSynth,
  createState,
  isCurrentForecast,
  isCurrentSynth,
  restoreFromHistory,
  setGeneratedRct
} from "./state.js";

const TEMPLATE = `
<div class="console">
  <section class="panel" id="query-panel">
    <h2>Policy query</h2>
    <textarea id="query-input" rows="3"
      placeholder="e.g. By how much can fertilizer vouchers increase maize yields for smallholder farmers?"></textarea>
    <div class="row">
      <label>Predictor
        <select id="predictor-select"></select>
      </label>
      <button id="interpret-btn" disabled>Interpret query</button>
    </div>
    <div id="error-banner" class="banner" hidden>
      <span id="error-text"></span>
      <button id="retry-btn">Retry</button>
    </div>
  </section>

  <section class="panel" id="editor-panel" hidden>
    <h2>Synthetic RCT <span id="edited-flag" class="tag" hidden>user-modified</span></h2>
    <div id="synth-warnings" class="warnings"></div>
    <label>Intervention <span id="intervention-absent" class="tag absent" hidden>absent</span>
      <textarea id="intervention-field" rows="3"></textarea>
    </label>
    <label>Outcome <span id="outcome-absent" class="tag absent" hidden>absent</span>
      <textarea id="outcome-field" rows="3"></textarea>
    </label>
    <button id="regenerate-btn">Regenerate</button>
  </section>

  <section class="panel" id="forecast-panel">
    <div id="forecast-warning" class="warnings" hidden></div>
    <button id="forecast-btn" disabled>Forecast</button>
    <div id="result-card" class="card" hidden>
      <div class="row">
        <span class="label">Effect size</span>
        <strong id="effect-value"></strong>
        <span id="ci-range" class="muted"></span>
      </div>
      <div class="row">
        <span id="badge" class="badge"></span>
        <span id="econ-marker" class="tag econ" hidden>economically meaningful (|effect| &gt; 0.1)</span>
      </div>
      <details id="trace-details">
        <summary>Pipeline trace</summary>
        <pre id="trace-json"></pre>
      </details>
    </div>
    <div id="failure-detail" class="banner" hidden>
      <span id="failure-text"></span>
      <pre id="failure-raw"></pre>
    </div>
  </section>

  <section class="panel" id="history-panel">
    <h2>Session history</h2>
    <button id="refresh-history-btn">Refresh</button>
    <p id="history-empty">No forecasts in this session yet.</p>
    <ul id="history-list"></ul>
  </section>
</div>`;

export interface ConsoleApp {
  state: ConsoleState;
  api: ApiClient;
  refreshHistory: () => Promise<void>;
  whenIdle: () => Promise<void>;
}

function el<T extends HTMLElement>(root: ParentNode, id: string): T {
  const found = root.querySelector<T>("#" + id);
  if (!found) throw new Error("missing element #" + id);
  return found;
}

export function initApp(
  root: HTMLElement,
  opts: { baseUrl: string; session?: string }
): ConsoleApp {
  const api = new ApiClient(opts.baseUrl);
  const state = createState(opts.session ?? "default");
  root.innerHTML = TEMPLATE;

  const queryInput = el<HTMLTextAreaElement>(root, "query-input");
  const predictorSelect = el<HTMLSelectElement>(root, "predictor-select");
  const interpretBtn = el<HTMLButtonElement>(root, "interpret-btn");
  const errorBanner = el<HTMLDivElement>(root, "error-banner");
  const errorText = el<HTMLSpanElement>(root, "error-text");
  const retryBtn = el<HTMLButtonElement>(root, "retry-btn");
  const editorPanel = el<HTMLElement>(root, "editor-panel");
  const synthWarnings = el<HTMLDivElement>(root, "synth-warnings");
  const interventionField = el<HTMLTextAreaElement>(root, "intervention-field");
  const outcomeField = el<HTMLTextAreaElement>(root, "outcome-field");
  const interventionAbsent = el<HTMLSpanElement>(root, "intervention-absent");
  const outcomeAbsent = el<HTMLSpanElement>(root, "outcome-absent");
  const editedFlag = el<HTMLSpanElement>(root, "edited-flag");
  const regenerateBtn = el<HTMLButtonElement>(root, "regenerate-btn");
  const forecastWarning = el<HTMLDivElement>(root, "forecast-warning");
  const forecastBtn = el<HTMLButtonElement>(root, "forecast-btn");
  const resultCard = el<HTMLDivElement>(root, "result-card");
  const effectValue = el<HTMLElement>(root, "effect-value");
  const ciRangeEl = el<HTMLSpanElement>(root, "ci-range");
  const badge = el<HTMLSpanElement>(root, "badge");
  const econMarker = el<HTMLSpanElement>(root, "econ-marker");
  const traceJson = el<HTMLPreElement>(root, "trace-json");
  const failureDetail = el<HTMLDivElement>(root, "failure-detail");
  const failureText = el<HTMLSpanElement>(root, "failure-text");
  const failureRaw = el<HTMLPreElement>(root, "failure-raw");
  const historyList = el<HTMLUListElement>(root, "history-list");
  const historyEmpty = el<HTMLParagraphElement>(root, "history-empty");
  const refreshHistoryBtn = el<HTMLButtonElement>(root, "refresh-history-btn");

  let lastAction: (() => void) | null = null;
  let pending = 0;
  let idleResolvers: (() => void)[] = [];

  function track<T>(promise: Promise<T>): Promise<T> {
    pending += 1;
    return promise.finally(() => {
      pending -= 1;
      if (pending === 0) {
        idleResolvers.forEach((resolve) => resolve());
        idleResolvers = [];
      }
    });
  }

  function whenIdle(): Promise<void> {
    if (pending === 0) return Promise.resolve();
    return new Promise((resolve) => idleResolvers.push(resolve));
  }

  function showError(err: unknown, retry: (() => void) | null): void {
    const message =
      err instanceof ServiceError ? `${err.code}: ${err.message}` : String(err);
    errorText.textContent = message;
    errorBanner.hidden = false;
    lastAction = retry;
    retryBtn.hidden = retry === null;
  }

  function clearError(): void {
    errorBanner.hidden = true;
    failureDetail.hidden = true;
  }

  function syncControls(): void {
    const hasQuery = queryInput.value.trim().length > 0;
    interpretBtn.disabled = !hasQuery;
    forecastBtn.disabled = !hasQuery || !predictorSelect.value;
    interventionAbsent.hidden = interventionField.value !== "";
    outcomeAbsent.hidden = outcomeField.value !== "";
    editedFlag.hidden = !state.userEdited;
    const outcomeMissing = !editorPanel.hidden && outcomeField.value === "";
    const interventionMissing = !editorPanel.hidden && interventionField.value === "";
    if (outcomeMissing || interventionMissing) {
      const missing = [
        interventionMissing ? "intervention" : null,
        outcomeMissing ? "outcome" : null
      ].filter(Boolean);
      forecastWarning.textContent =
        "Forecast will treat the " + missing.join(" and ") + " as unspecified.";
      forecastWarning.hidden = false;
    } else {
      forecastWarning.hidden = true;
    }
  }

  function renderEditor(rct: SyntheticRct, warnings: string[]): void {
    editorPanel.hidden = false;
    interventionField.value = rct.intervention ?? "";
    outcomeField.value = rct.outcome ?? "";
    synthWarnings.textContent = warnings.length ? "Warnings: " + warnings.join("; ") : "";
    syncControls();
  }

  function interpret(): void {
    clearError();
    state.queryText = queryInput.value;
    const seq = beginSynth(state);
    track(
      api
        .synthRct(state.queryText)
        .then((response) => {
          if (!isCurrentSynth(state, seq)) return;
          setGeneratedRct(state, response.synthetic_rct);
          renderEditor(response.synthetic_rct, response.warnings);
        })
        .catch((err) => showError(err, interpret))
    );
  }

  function renderResult(response: ForecastResponse): void {
    resultCard.hidden = false;
    const p = response.prediction;
    effectValue.textContent = display4(p.effect);
    effectValue.title = fullPrecision(p.effect);
    ciRangeEl.textContent = ciRange(p.ci_lower, p.ci_upper);
    ciRangeEl.title = fullPrecision(p.ci_lower) + " .. " + fullPrecision(p.ci_upper);
    badge.textContent = badgeLabel(response.significance_class);
    badge.dataset.significance = response.significance_class;
    econMarker.hidden = !response.economically_meaningful;
    traceJson.textContent = JSON.stringify(response.pipeline_trace, null, 2);
  }

  function forecast(): void {
    clearError();
    state.queryText = queryInput.value;
    state.predictorId = predictorSelect.value;
    const body: ForecastRequest = {
      query_text: state.queryText,
      predictor_id: state.predictorId,
      session: state.session
    };
    if (state.userEdited && state.rct !== null) {
      body.synthetic_rct = state.rct;
    }
    const seq = beginForecast(state);
    track(
      api
        .forecast(body)
        .then((response) => {
          if (!isCurrentForecast(state, seq)) return;
          renderResult(response);
          return refreshHistory();
        })
        .catch((err) => {
          if (!isCurrentForecast(state, seq)) return;
          if (err instanceof ServiceError && err.status === 422) {
            failureText.textContent = `prediction failed (${err.code}): ${err.message}`;
            const raw = (err.detail as { raw?: string } | null)?.raw;
            failureRaw.textContent = raw ?? JSON.stringify(err.detail, null, 2);
            failureDetail.hidden = false;
          } else {
            showError(err, forecast);
          }
        })
    );
  }

  function renderHistory(entries: Awaited<ReturnType<ApiClient["history"]>>): void {
    historyList.innerHTML = "";
    historyEmpty.hidden = entries.length > 0;
    entries.forEach((entry) => {
      const li = document.createElement("li");
      const label = document.createElement("span");
      label.textContent =
        entry.query_text + " -> " + display4(entry.prediction.effect) +
        " (" + badgeLabel(entry.significance_class) + ")";
      const restore = document.createElement("button");
      restore.textContent = "Restore";
      restore.addEventListener("click", () => {
        restoreFromHistory(state, entry.query_text, entry.synthetic_rct);
        queryInput.value = entry.query_text;
        if (entry.synthetic_rct) {
          renderEditor(entry.synthetic_rct, []);
        }
        syncControls();
      });
      li.appendChild(label);
      li.appendChild(restore);
      historyList.appendChild(li);
    });
  }

  function refreshHistory(): Promise<void> {
    return track(
      api
        .history(state.session)
        .then(renderHistory)
        .catch((err) => showError(err, null))
    );
  }

  function loadPredictors(): void {
    track(
      api
        .predictors()
        .then((ids) => {
          predictorSelect.innerHTML = "";
          ids.forEach((id) => {
            const option = document.createElement("option");
            option.value = id;
            option.textContent = id;
            predictorSelect.appendChild(option);
          });
          syncControls();
        })
        .catch((err) => showError(err, loadPredictors))
    );
  }

  queryInput.addEventListener("input", syncControls);
  interventionField.addEventListener("input", () => {
    applyEdit(state, "intervention", interventionField.value);
    syncControls();
  });
  outcomeField.addEventListener("input", () => {
    applyEdit(state, "outcome", outcomeField.value);
    syncControls();
  });
  interpretBtn.addEventListener("click", interpret);
  regenerateBtn.addEventListener("click", interpret);
  forecastBtn.addEventListener("click", forecast);
  refreshHistoryBtn.addEventListener("click", () => void refreshHistory());
  retryBtn.addEventListener("click", () => {
    if (lastAction) lastAction();
  });

  loadPredictors();
  void refreshHistory();
  syncControls();

  return { state, api, refreshHistory, whenIdle };
}
