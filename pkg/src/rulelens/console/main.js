import { ApiClient, ApiError } from "./api.js";
import { applyClusters, applyExclude, applyExplain, applyReset, initialState, selectCluster, } from "./state.js";
import { escapeHtml, num, renderBadges, renderClusterTable, renderComparison, renderError, renderExplanation, renderMetrics, renderSessionLine, renderSteerReport, } from "./render.js";
const api = new ApiClient("");
let state = initialState();
const displayCache = new Map();
let searchResults = [];
let lastOp = null;
function el(id) {
    const node = document.getElementById(id);
    if (node === null)
        throw new Error(`missing element #${id}`);
    return node;
}
function setState(next) {
    state = next;
    el("session-line").textContent = "";
    el("session-line").insertAdjacentHTML("beforeend", renderSessionLine(state));
    el("explanation").innerHTML = state.current === null
        ? '<p class="hint">Pick an instance id and explain it.</p>'
        : renderExplanation(state.current);
    el("comparison").innerHTML = renderComparison(state.comparison.before, state.comparison.after);
    el("cluster-table").innerHTML = state.clusterReport === null
        ? '<p class="hint">Load clusters to see the per-cluster diagnostics.</p>'
        : renderClusterTable(state.clusterReport);
    renderClusterDetail();
    el("badges").innerHTML = renderBadges(state.exclusions);
    el("steer-report").innerHTML = renderSteerReport(state.lastReport);
}
function renderClusterDetail() {
    const box = el("cluster-detail");
    if (state.clusterReport === null || state.selectedCluster === null) {
        box.innerHTML = '<p class="hint">Select a cluster row for details.</p>';
        return;
    }
    const info = state.clusterReport.clusters[state.selectedCluster];
    const atoms = info.top_atoms
        .map(([atom, count]) => `<li>${escapeHtml(atom)} (${num(count)}) ` +
        `<button type="button" class="exclude-shortcut" data-display="${escapeHtml(atom)}">exclude</button></li>`)
        .join("\n");
    box.innerHTML =
        `<h4>cluster ${num(info.cluster_id)}</h4>` +
            `<p>majority ${escapeHtml(info.majority_label)} (${num(info.majority_ratio)}), ` +
            `accuracy ${num(info.accuracy)}</p><ul>${atoms}</ul>`;
}
function clearError() {
    el("error").innerHTML = "";
}
function showError(err) {
    const code = err instanceof ApiError ? err.code : "client_error";
    const message = err instanceof Error ? err.message : String(err);
    el("error").innerHTML = renderError(code, message);
    const retry = document.getElementById("retry-btn");
    if (retry !== null && lastOp !== null) {
        retry.addEventListener("click", () => void run(lastOp));
    }
}
async function run(op) {
    lastOp = op;
    clearError();
    try {
        await op();
    }
    catch (err) {
        showError(err);
    }
}
async function explainSelectedAgain() {
    if (state.selected === null)
        return;
    setState(applyExplain(state, await api.explainId(state.selected)));
}
async function opExplainId() {
    const raw = el("instance-id").value.trim();
    const id = Number(raw);
    if (!Number.isInteger(id))
        throw new Error(`instance id must be an integer, got "${raw}"`);
    setState(applyExplain(state, await api.explainId(id)));
}
async function opExplainAdHoc() {
    const raw = el("adhoc-json").value;
    const instance = JSON.parse(raw);
    setState(applyExplain(state, await api.explainAdHoc(instance)));
}
async function opLoadClusters() {
    const k = Number(el("cluster-k").value);
    setState(applyClusters(state, k, await api.clusters(k)));
}
async function opSearchAtoms() {
    const query = el("atom-query").value;
    const found = await api.atoms(query);
    searchResults = found.atoms;
    for (const a of searchResults)
        displayCache.set(a.id, a.display);
    el("atom-results").innerHTML = searchResults.length === 0
        ? '<p class="hint">No atoms match.</p>'
        : searchResults
            .map((a) => `<label><input type="checkbox" class="atom-pick" value="${a.id}"> ` +
            `${escapeHtml(a.display)} <span class="cov">(coverage ${num(a.coverage)})</span></label>`)
            .join("<br>\n");
}
async function opExcludeSelected() {
    const picked = Array.from(document.querySelectorAll(".atom-pick:checked")).map((box) => Number(box.value));
    if (picked.length === 0)
        throw new Error("select at least one atom to exclude");
    setState(applyExclude(state, await api.exclude(picked), displayCache));
    await explainSelectedAgain();
}
async function opExcludeByDisplay(display) {
    const found = await api.atoms(display);
    const hit = found.atoms.find((a) => a.display === display);
    if (hit === undefined)
        throw new Error(`no atom with display "${display}"`);
    displayCache.set(hit.id, hit.display);
    setState(applyExclude(state, await api.exclude([hit.id]), displayCache));
    await explainSelectedAgain();
}
async function opReset() {
    setState(applyReset(state, await api.reset()));
    await explainSelectedAgain();
}
async function opRefreshHeader() {
    const health = await api.health();
    el("health").textContent = health.model_loaded ? "model loaded" : "no model";
    el("metrics").innerHTML = renderMetrics(await api.metrics());
}
function wireTabs() {
    const tabs = Array.from(document.querySelectorAll(".tab"));
    for (const tab of tabs) {
        tab.addEventListener("click", () => {
            for (const other of tabs)
                other.classList.toggle("active", other === tab);
            for (const section of document.querySelectorAll(".view")) {
                section.hidden = section.id !== tab.dataset.view;
            }
        });
    }
}
export function boot() {
    wireTabs();
    el("explain-btn").addEventListener("click", () => void run(opExplainId));
    el("adhoc-btn").addEventListener("click", () => void run(opExplainAdHoc));
    el("cluster-btn").addEventListener("click", () => void run(opLoadClusters));
    el("atom-search-btn").addEventListener("click", () => void run(opSearchAtoms));
    el("exclude-btn").addEventListener("click", () => void run(opExcludeSelected));
    el("reset-btn").addEventListener("click", () => void run(opReset));
    el("cluster-table").addEventListener("click", (ev) => {
        const row = ev.target.closest("tr[data-cluster]");
        if (row !== null) {
            setState(selectCluster(state, Number(row.getAttribute("data-cluster"))));
        }
    });
    el("cluster-detail").addEventListener("click", (ev) => {
        const btn = ev.target.closest(".exclude-shortcut");
        if (btn !== null) {
            const display = btn.getAttribute("data-display") ?? "";
            void run(() => opExcludeByDisplay(display));
        }
    });
    setState(state);
    void run(opRefreshHeader);
}
boot();
