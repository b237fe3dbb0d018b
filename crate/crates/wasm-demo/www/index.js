import init, { labelRegions, demoHeatmap, consensusSurface, preferenceCurves } from "../pkg/clincot_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const PALETTE = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45"];

function report(el, err) {
  el.innerHTML = `<span class="err">${err.message ?? err}</span>`;
}

function gray(v) {
  const c = Math.round(255 * Math.min(1, Math.max(0, v)));
  return `rgb(${c},${c},${c})`;
}

function drawGrid(canvas, h, w, color) {
  const ctx = canvas.getContext("2d");
  const cw = canvas.width / w;
  const ch = canvas.height / h;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      ctx.fillStyle = color(r * w + c);
      ctx.fillRect(c * cw, r * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
  return { ctx, cw, ch };
}

function updateRegions() {
  const info = $("region-info");
  const tau = Number($("tau").value);
  $("tau-out").value = tau.toFixed(2);
  try {
    const v = JSON.parse(labelRegions($("heat-text").value, tau, Number($("min-area").value)));
    drawGrid($("heat-canvas"), v.height, v.width, (i) => gray(v.values[i]));
    const { ctx, cw, ch } = drawGrid($("label-canvas"), v.height, v.width, (i) =>
      v.labels[i] < 0 ? "#fff" : PALETTE[v.labels[i] % PALETTE.length]);
    if (v.selected !== null) {
      ctx.strokeStyle = "#000";
      ctx.lineWidth = 2;
      for (let i = 0; i < v.labels.length; i++) {
        if (v.labels[i] === v.selected) {
          ctx.strokeRect((i % v.width) * cw + 1, Math.floor(i / v.width) * ch + 1, cw - 2, ch - 2);
        }
      }
    }
    const kept = v.selected === null ? "none (hypothesis skipped)" : `component 0, area ${v.areas[0]}`;
    info.innerHTML = `components: ${v.areas.length}<br>areas: ${v.areas.join(", ") || "-"}<br>kept: ${kept}`;
  } catch (e) {
    report(info, e);
  }
}

function newHeatmap() {
  $("heat-text").value = demoHeatmap(20, Number($("heat-seed").value) >>> 0);
  updateRegions();
}

function drawSurface() {
  const n = 64;
  const s = JSON.parse(consensusSurface(n));
  const canvas = $("surface-canvas");
  drawGrid(canvas, n, n, (i) => {
    const v = s.values[i];
    return `hsl(${240 - 240 * v}, 80%, ${25 + 45 * v}%)`;
  });
  canvas.onmousemove = (ev) => {
    const rect = canvas.getBoundingClientRect();
    const j = Math.min(n - 1, Math.floor(((ev.clientX - rect.left) / rect.width) * n));
    const i = Math.min(n - 1, Math.floor(((ev.clientY - rect.top) / rect.height) * n));
    const s1 = i / (n - 1);
    const s2 = j / (n - 1);
    $("surface-info").innerHTML =
      `s1 = ${s1.toFixed(3)}, s2 = ${s2.toFixed(3)}<br>weight = ${s.values[i * n + j].toFixed(4)}`;
  };
}

function drawCurves(c) {
  const canvas = $("loss-canvas");
  const ctx = canvas.getContext("2d");
  const W = canvas.width;
  const H = canvas.height;
  const ymax = Math.max(...c.margin_loss, ...c.plain_loss);
  const x = (g) => ((g - c.gaps[0]) / (c.gaps[c.gaps.length - 1] - c.gaps[0])) * (W - 40) + 30;
  const y = (l) => H - 20 - (l / ymax) * (H - 30);
  ctx.clearRect(0, 0, W, H);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(x(0), 10);
  ctx.lineTo(x(0), H - 20);
  ctx.moveTo(30, H - 20);
  ctx.lineTo(W - 10, H - 20);
  ctx.stroke();
  for (const [series, color] of [[c.plain_loss, "#4363d8"], [c.margin_loss, "#e6194b"]]) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    series.forEach((l, i) => (i ? ctx.lineTo(x(c.gaps[i]), y(l)) : ctx.moveTo(x(c.gaps[i]), y(l))));
    ctx.stroke();
  }
  ctx.fillStyle = "#222";
  ctx.fillText("reward gap", W - 70, H - 5);
  ctx.fillStyle = "#4363d8";
  ctx.fillText("plain", 40, 20);
  ctx.fillStyle = "#e6194b";
  ctx.fillText("with margin", 40, 34);
}

function runPreference() {
  const info = $("pref-info");
  try {
    const c = JSON.parse(preferenceCurves(
      Number($("sw").value), Number($("sl").value), Number($("lambda").value),
      Number($("rgap").value), Number($("samples").value) >>> 0, 7));
    drawCurves(c);
    info.innerHTML = `&Delta;r = ${c.delta_r.toFixed(4)}<br>` +
      `Monte-Carlo P = ${c.mc_probability.toFixed(4)}<br>` +
      `closed form &sigma;(gap &minus; &Delta;r) = ${c.closed_form.toFixed(4)}`;
  } catch (e) {
    report(info, e);
  }
}

await init();
$("tau").oninput = updateRegions;
$("min-area").oninput = updateRegions;
$("heat-text").oninput = updateRegions;
$("new-heat").onclick = newHeatmap;
$("run-pref").onclick = runPreference;
newHeatmap();
drawSurface();
runPreference();
