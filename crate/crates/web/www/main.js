import init, { Scene, levels_curve } from "./pkg/visinst_web.js";

const SIZE = 128;
const $ = (id) => document.getElementById(id);
let scene;

function paint(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function controls() {
  const v = {};
  for (const name of ["norm_low", "norm_high", "brightness", "contrast"]) {
    const input = $(name);
    input.nextElementSibling.textContent = input.value;
    v[name] = Number(input.value);
  }
  return v;
}

function drawCurve(low, high) {
  const ctx = $("curve").getContext("2d");
  const lut = levels_curve(low, high);
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, 256, 256);
  ctx.strokeStyle = "#333";
  ctx.beginPath();
  ctx.moveTo(0, 255);
  ctx.lineTo(255, 0);
  ctx.stroke();
  ctx.strokeStyle = "#fc6";
  ctx.beginPath();
  lut.forEach((y, x) => (x ? ctx.lineTo(x, 255 - y) : ctx.moveTo(x, 255 - y)));
  ctx.stroke();
}

function renderLive() {
  const v = controls();
  const rgba = scene.live_input(SIZE, v.norm_low, v.norm_high, v.brightness, v.contrast);
  paint($("live"), rgba, SIZE, SIZE);
  drawCurve(v.norm_low, v.norm_high);
}

function renderPair() {
  const pair = scene.sample_pair(SIZE, Number($("pair-seed").value) >>> 0);
  paint($("pair-target"), pair.target_rgba(), SIZE, SIZE);
  paint($("pair-input"), pair.input_rgba(), SIZE, SIZE);
  $("pair-params").textContent = pair.describe();
  pair.free();
}

function newScene() {
  if (scene) scene.free();
  scene = new Scene(Number($("scene-seed").value) >>> 0, 320);
  paint($("frame"), scene.frame_rgba(), scene.width(), scene.height());
  renderLive();
  renderPair();
}

await init();
for (const name of ["norm_low", "norm_high", "brightness", "contrast"]) {
  $(name).addEventListener("input", renderLive);
}
$("new-scene").addEventListener("click", () => {
  $("scene-seed").value = Number($("scene-seed").value) + 1;
  newScene();
});
$("scene-seed").addEventListener("change", newScene);
$("next-pair").addEventListener("click", () => {
  $("pair-seed").value = Number($("pair-seed").value) + 1;
  renderPair();
});
$("pair-seed").addEventListener("change", renderPair);
newScene();
