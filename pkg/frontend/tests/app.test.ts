// @vitest-environment jsdom
import { afterEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { LabelerApp } from "../src/app";
import { FakeService, MemoryStorage } from "./helpers";

function makeApp(svc: FakeService, storage = new MemoryStorage()) {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = new LabelerApp({
    api: new ApiClient("", svc.fetch),
    storage,
    root,
  });
  return { app, root };
}

const apps: LabelerApp[] = [];

afterEach(() => {
  apps.splice(0).forEach((a) => a.stop());
  document.body.textContent = "";
});

describe("LabelerApp", () => {
  it("shows the idle screen when no batch is pending", async () => {
    const { app, root } = makeApp(new FakeService("b1", []));
    apps.push(app);
    await app.refresh();
    expect(root.querySelector(".idle")?.textContent).toContain("no batch pending");
  });

  it("renders the first image scaled at least 4x with class buttons", async () => {
    const { app, root } = makeApp(new FakeService("b1", [7, 8]));
    apps.push(app);
    await app.refresh();
    const img = root.querySelector("img")!;
    expect(img.getAttribute("src")).toBe("/api/image/7");
    expect(img.width).toBeGreaterThanOrEqual(28 * 4);
    expect(root.querySelectorAll(".classes button")).toHaveLength(10);
    expect(root.querySelector(".progress")?.textContent).toBe("0 / 2");
  });

  it("digit key labels the current image and advances", async () => {
    const svc = new FakeService("b1", [7, 8]);
    const { app, root } = makeApp(svc);
    apps.push(app);
    await app.refresh();
    app.onKey("3");
    expect(root.querySelector(".progress")?.textContent).toBe("1 / 2");
    expect(root.querySelector("img")?.getAttribute("src")).toBe("/api/image/8");
    await Promise.resolve(); // let the background flush settle
    await Promise.resolve();
    expect(svc.labels.get(7)).toBe(3);
  });

  it("non-class keys are ignored", async () => {
    const { app, root } = makeApp(new FakeService("b1", [7]));
    apps.push(app);
    await app.refresh();
    app.onKey("x");
    app.onKey("Enter");
    expect(root.querySelector(".progress")?.textContent).toBe("0 / 1");
  });

  it("shows the completion screen after the last label", async () => {
    const svc = new FakeService("b1", [7]);
    const { app, root } = makeApp(svc);
    apps.push(app);
    await app.refresh();
    app.onKey("9");
    expect(root.querySelector(".done")?.textContent).toContain("batch done");
  });

  it("clicking a class button labels too", async () => {
    const svc = new FakeService("b1", [5]);
    const { app, root } = makeApp(svc);
    apps.push(app);
    await app.refresh();
    (root.querySelectorAll(".classes button")[6] as HTMLButtonElement).click();
    await Promise.resolve();
    await Promise.resolve();
    expect(svc.labels.get(5)).toBe(6);
  });

  it("shows a retry note when the service is unreachable", async () => {
    const svc = new FakeService("b1", [1]);
    svc.failNetwork = true;
    const { app, root } = makeApp(svc);
    apps.push(app);
    await app.refresh();
    expect(root.querySelector(".error")?.textContent).toContain("retrying");
  });
});
