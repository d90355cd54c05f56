import { StudyApi } from "./api.js";
import { SessionApp } from "./app.js";

declare global {
  interface Window {
    IDSQS_BASE_URL?: string;
  }
}

function baseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("service");
  return fromQuery ?? window.IDSQS_BASE_URL ?? "";
}

function boot(): void {
  const mount = document.getElementById("app");
  if (!mount) {
    throw new Error("missing #app mount point");
  }
  mount.innerHTML = `
    <section class="welcome">
      <h1>Image quality study</h1>
      <label>Worker id <input type="text" class="subject-id" autocomplete="off"></label>
      <button type="button" class="start">start</button>
    </section>
  `;
  const input = mount.querySelector(".subject-id") as HTMLInputElement;
  const button = mount.querySelector(".start") as HTMLButtonElement;
  button.addEventListener("click", () => {
    const subject = input.value.trim();
    if (!subject) {
      input.focus();
      return;
    }
    const app = new SessionApp(new StudyApi(baseUrl()), mount);
    void app.start(subject);
  });
}

boot();
