import { mountDashboard, type Dashboard } from "./mount";

// Browser entry. The page ships from the control API's own origin, so the
// base URL is implicit; only the bearer token needs to come from the tester.

const TOKEN_KEY = "apifray-token";

function boot(): void {
  const tokenInput = document.querySelector<HTMLInputElement>("#token-input");
  const connectButton = document.querySelector<HTMLButtonElement>("#connect");
  const statusDot = document.querySelector<HTMLElement>("#conn-status");
  const banner = document.querySelector<HTMLElement>("#banner");
  const mounts = {
    flows: document.querySelector<HTMLElement>("#flows-panel"),
    console: document.querySelector<HTMLElement>("#console-panel"),
    observe: document.querySelector<HTMLElement>("#observe-panel"),
    report: document.querySelector<HTMLElement>("#report-panel"),
    notices: document.querySelector<HTMLElement>("#notices"),
  };
  if (
    tokenInput === null ||
    connectButton === null ||
    mounts.flows === null ||
    mounts.console === null ||
    mounts.observe === null ||
    mounts.report === null ||
    mounts.notices === null
  ) {
    return;
  }

  let dashboard: Dashboard | null = null;

  const connect = (token: string) => {
    dashboard?.stop();
    dashboard = mountDashboard(
      {
        flows: mounts.flows as HTMLElement,
        console: mounts.console as HTMLElement,
        observe: mounts.observe as HTMLElement,
        report: mounts.report as HTMLElement,
        notices: mounts.notices as HTMLElement,
        status: statusDot ?? undefined,
      },
      { baseUrl: window.location.origin, token },
    );
    dashboard.app
      .start()
      .then(() => {
        sessionStorage.setItem(TOKEN_KEY, token);
        if (banner !== null) banner.textContent = "";
        return dashboard?.app.refreshReport().catch(() => {
          // aggregation can fail on inconsistent sessions; panels still work
        });
      })
      .catch((err: unknown) => {
        if (banner !== null) {
          banner.textContent =
            err instanceof Error ? err.message : "cannot reach the control API";
        }
      });
  };

  connectButton.addEventListener("click", () => {
    const token = tokenInput.value.trim();
    if (token !== "") connect(token);
  });
  tokenInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") connectButton.click();
  });

  const remembered = sessionStorage.getItem(TOKEN_KEY);
  if (remembered !== null && remembered !== "") {
    tokenInput.value = remembered;
    connect(remembered);
  }
}

boot();
